"""Convolution kernel backend selection.

The compiled Cython kernels are used when importable; otherwise the numpy
im2col fallback.  Override with A2D_KERNELS=cy|py|auto (auto = prefer
compiled).  `BACKEND` names the backend actually in use.
"""

import os

from . import conv_py

_choice = os.environ.get("A2D_KERNELS", "auto").lower()

if _choice not in ("auto", "cy", "py"):
    raise ValueError(f"A2D_KERNELS must be auto|cy|py, got {_choice!r}")

if _choice == "py":
    _impl = conv_py
    BACKEND = "py"
else:
    try:
        from . import conv_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cy"
    except ImportError:
        if _choice == "cy":
            raise ImportError(
                "A2D_KERNELS=cy but the compiled extension is missing; "
                "run `python3 setup.py build_ext --inplace`"
            ) from None
        _impl = conv_py
        BACKEND = "py"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight
depthwise_forward = _impl.depthwise_forward
depthwise_backward_input = _impl.depthwise_backward_input
depthwise_backward_weight = _impl.depthwise_backward_weight
