# Signal I/O, kernels, instrumentation, phase simulation and energy tables
