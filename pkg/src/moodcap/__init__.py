"""moodcap: sentiment-controllable attention-based caption generation.

The package couples a small verification-grade autodiff core with an
attention LSTM decoder that injects sentiment at two levels (into the
gates and into the word softmax), training with a two-part loss,
sentiment-switchable decoding, and the caption evaluation metric suite.
"""

__version__ = "0.1.0"
