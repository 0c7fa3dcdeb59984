"""Expert finding and decline-aware ranking.

Modules: ``core`` (data model), ``retrieval`` (language-model candidates),
``embedding`` (skip-gram, nBOW), ``transport`` (question-to-expert distance),
``features``, ``rankfg`` (factor-graph model), ``evaluation``, ``synth``
and ``cli``.
"""

__version__ = "0.1.0"
