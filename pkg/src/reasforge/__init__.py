"""reasforge: reasoning-trace curation and desk-scale training for VideoQA.

Pipeline stages, each reading and writing JSON Lines files:

    generate -> classify -> refine -> build -> train/eval

See the README for the CLI walkthrough.
"""

__version__ = "0.1.0"
