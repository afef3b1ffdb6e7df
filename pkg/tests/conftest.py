import os

# Pin BLAS to one thread before numpy loads: the timing criteria assume
# exclusive execution, and oversubscribed BLAS threads on a small CPU quota
# make the dense steps several times slower and noisier.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

try:
    from threadpoolctl import threadpool_limits

    _BLAS_LIMIT = threadpool_limits(limits=1)
except ImportError:  # env vars above still apply
    _BLAS_LIMIT = None
