"""Published reference timings from a 256x H100 cluster, for annotation only.

These numbers were measured on real hardware (8K tokens per device, 5 warm-up
rounds, averages over 50 runs; throughput averaged over 100 steps on a
1B-parameter model with 20 layers). They are shipped so reports can be placed
next to a real-world anchor; no test or acceptance criterion targets them.

Keys are GPU counts; ``None`` marks configurations that ran out of memory or
were not measured.
"""

# Collective runtime in milliseconds (H = 32, d = 4096, L = 8192 per device).
COMM_RUNTIME_MS = {
    "all_gather_linear": {8: 0.37488, 16: 0.65769, 32: 1.61594, 64: 2.54305,
                          128: 4.35, 256: 8.51388},
    "all_scan": {8: 0.22578, 16: 0.29686, 32: 0.44775, 64: 0.73899,
                 128: 1.27166, 256: 2.16454},
    "all_reduce": {8: 0.1375, 16: 0.22803, 32: 0.31073, 64: 0.41486,
                   128: 0.50084, 256: 0.60405},
}

# One forward+backward iteration in milliseconds (H = 16, d = 2048).
ALGORITHM_RUNTIME_MS_16K = {
    "lasp1": {8: 22.59, 16: 28.20, 32: 39.03, 64: 61.18, 128: 113.71},
    "lasp2": {8: 19.39, 16: 24.48, 32: 25.72, 64: 29.17, 128: 35.72},
    "zeco": {8: 7.32, 16: 7.45, 32: 7.65, 64: 8.04, 128: 9.88},
    "baseline": {8: 6.39, 16: 6.47, 32: 6.44, 64: 6.12, 128: 6.55},
}

ALGORITHM_RUNTIME_MS_32K = {
    "lasp1": {8: 41.64, 16: 52.14, 32: 72.97, 64: 119.79, 128: 217.20},
    "lasp2": {8: 27.57, 16: 30.80, 32: 33.08, 64: 39.44, 128: 42.50},
    "zeco": {8: 12.12, 16: 12.41, 32: 12.98, 64: 13.56, 128: 15.06},
    "baseline": {8: 11.76, 16: 11.74, 32: 11.74, 64: 11.79, 128: 11.74},
}

# Training throughput per GPU in tokens/second (1B model, H = 32, d = 2048).
THROUGHPUT_TOKENS_PER_SEC_16K = {
    "lasp1": {8: 26428, 16: 22244, 32: 17813, 64: 12596, 128: None, 256: None},
    "lasp2": {8: 37812, 16: 31415, 32: 29802, 64: 27166, 128: 22386, 256: 15196},
    "zeco": {8: 44497, 16: 42328, 32: 40463, 64: 39832, 128: 37955, 256: 34400},
    "baseline": {8: 47594, 16: 46786, 32: 46214, 64: 45744, 128: 44847, 256: 42838},
}

THROUGHPUT_TOKENS_PER_SEC_32K = {
    "lasp1": {8: 27014, 16: 23302, 32: 18129, 64: 12268, 128: None, 256: None},
    "lasp2": {8: 42946, 16: 41190, 32: 39669, 64: 37485, 128: 33327, 256: 25402},
    "zeco": {8: 47369, 16: 46209, 32: 45091, 64: 44468, 128: 43278, 256: 40967},
    "baseline": {8: 49633, 16: 49058, 32: 47980, 64: 48230, 128: 47848, 256: 46588},
}
