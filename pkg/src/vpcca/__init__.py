"""Deep probabilistic canonical correlation analysis.

Exact linear CCA / probabilistic CCA fits (:mod:`vpcca.pcca`), the latent
multi-view layer (:mod:`vpcca.mvlayer`), variational training of deep
encoders and decoders around it (:mod:`vpcca.train`), data handling
(:mod:`vpcca.dataio`) and downstream evaluation (:mod:`vpcca.evalkit`).
"""
from ._accel import USE_NUMBA, set_num_threads

__version__ = "0.1.0"

__all__ = ["USE_NUMBA", "set_num_threads", "__version__"]
