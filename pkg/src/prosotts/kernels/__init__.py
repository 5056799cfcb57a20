"""Hot-kernel dispatch: compiled Cython core with a numpy fallback.

The backend is chosen once at import time:

* ``PROSOTTS_KERNELS=compiled`` requires the extension (ImportError if absent),
* ``PROSOTTS_KERNELS=pure`` forces the numpy reference backend,
* unset or ``auto``: compiled if available, else pure.

`benchmarks/bench_kernels.py` compares the two.
"""

import os

from . import pure

_choice = os.environ.get("PROSOTTS_KERNELS", "auto")

if _choice not in ("auto", "compiled", "pure"):
    raise ValueError(f"PROSOTTS_KERNELS must be auto|compiled|pure, got {_choice!r}")

if _choice == "pure":
    _impl = pure
else:
    try:
        from . import _core as _impl
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "PROSOTTS_KERNELS=compiled but the prosotts.kernels._core "
                "extension is not built; reinstall or use PROSOTTS_KERNELS=pure"
            )
        _impl = pure

BACKEND = _impl.NAME

conv1d_fwd = _impl.conv1d_fwd
conv1d_bwd = _impl.conv1d_bwd
convt1d_fwd = _impl.convt1d_fwd
convt1d_bwd = _impl.convt1d_bwd
forward_sum_fb = _impl.forward_sum_fb
viterbi_path = _impl.viterbi_path
dtw_accum = _impl.dtw_accum
