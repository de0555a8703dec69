"""Joint word recognition and word-level timestamp prediction at desk scale.

Modules: ``codec`` (vocabulary and interleaved sequences), ``synth``
(synthetic corpora and length augmentation), ``model`` (tiny decoder),
``training`` (losses, timestamp corruption, training loop), ``evaluation``
(WER / AAS / MAL), ``experiment`` and ``cli``.
"""

__version__ = "0.1.0"
