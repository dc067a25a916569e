"""Hot numeric kernels with a compiled core and a numpy fallback.

The compiled extension (``marquee.kernels._cy``) is preferred when it was
built; otherwise the numpy implementation is used transparently. Selection
can be forced with the ``MARQUEE_KERNELS`` environment variable:

    MARQUEE_KERNELS=numpy   always use the numpy backend
    MARQUEE_KERNELS=cython  require the compiled backend (ImportError if absent)

Both backends expose the same functions and are held to numerical parity by
tests/test_kernels.py; benchmarks/bench_kernels.py compares their speed.
"""

from __future__ import annotations

import os

from . import _np

ACT_IDENTITY = _np.ACT_IDENTITY
ACT_RELU = _np.ACT_RELU
ACT_TANH = _np.ACT_TANH

_requested = os.environ.get("MARQUEE_KERNELS", "auto").lower()

if _requested == "numpy":
    _impl = _np
    backend_name = "numpy"
elif _requested == "cython":
    from . import _cy as _impl  # noqa: F401  (raises if not built)

    backend_name = "cython"
elif _requested == "auto":
    try:
        from . import _cy as _impl  # type: ignore[no-redef]

        backend_name = "cython"
    except ImportError:
        _impl = _np
        backend_name = "numpy"
else:
    raise ImportError(f"MARQUEE_KERNELS must be 'numpy', 'cython' or 'auto', got {_requested!r}")

affine_forward = _impl.affine_forward
affine_backward = _impl.affine_backward
act_forward = _impl.act_forward
act_backward = _impl.act_backward
segment_mean = _impl.segment_mean
segment_mean_backward = _impl.segment_mean_backward
sgd_update = _impl.sgd_update
adam_update = _impl.adam_update
squared_distances = _impl.squared_distances
