"""Deterministic mobile GUI-agent runtime and training-data laboratory.

Library layout:

- ``actions``        typed action space, three-part response parsing, wire format
- ``simenv``         deterministic simulated mobile environment
- ``gateway``        scripted + HTTP model backends behind one interface
- ``executor``       the central execution agent (resumable runs)
- ``knowledge``      lexical knowledge store and retriever
- ``orchestration``  instruction classification, decomposition, memory transfer
- ``reflection``     action/trajectory/global reflectors and feedback routing
- ``datalab``        step splitting, augmentation, filtering, rewards, GRPO math
- ``evolve``         query pool, rollouts, discriminator gate, corrections, export
- ``persona``        per-user SOP and preference knowledge bases
- ``ask``            trustworthiness decisions and the two-sample generator
- ``runtime``        CLI, HTTP session service, persistence
"""

__version__ = "0.1.0"
