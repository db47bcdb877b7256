"""Green kernels for the parabolic interior transmission problem.

Modules: ``geometry`` (metrics, contrast), ``symbols`` (roots and amplitudes),
``kernels`` (inverse Laplace-Fourier evaluation, Gaussian fits),
``parametrix`` (partitions and patched kernels), ``levi`` (Volterra
compensation), ``refsolver`` (1-D finite differences), ``sampling`` (ND maps
and linear sampling) and ``acceptance``. The command line lives in ``cli``.
"""

__version__ = "0.1.0"
