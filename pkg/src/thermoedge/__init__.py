"""Edge inference toolkit for thermal leaf-disease classification: small
CNN training, pruning + quantization-aware compression to int8/float16,
a real-time frame-streaming server and a benchmark harness."""

__version__ = "0.1.0"
