"""qfeedback: quantum-optical electro-optic feedback toolkit.

Closed-form feedback-loop spectra and Nyquist stability of delayed loops, a
semiclassical Monte Carlo oracle, QND-cavity feedback spectra, stochastic
master equation (quantum trajectory) engines with homodyne-mediated feedback,
intracavity conditioned-variance (Riccati) squeezing, and the in-loop
two-level atom.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    atom_squash,
    errors,
    intracavity,
    loop,
    operators,
    qnd,
    semiclassical,
    trajectories,
)
from .errors import QFeedbackError  # noqa: F401
from .loop import (  # noqa: F401
    FeedbackBeamline,
    LoopFilter,
    Sampled,
    SinglePole,
    Spectrum,
)
from .operators import LindbladModel  # noqa: F401
