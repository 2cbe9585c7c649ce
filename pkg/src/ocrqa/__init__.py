"""Text-centered question answering over OCR tokens and scene objects.

The pipeline turns pre-extracted OCR tokens into a reading-ordered context,
encodes question/context/objects with recurrent + attention layers, reasons
over OCR-object relations by semantic and positional attention, and scores
answer candidates (OCR spans, retrieved texts, yes/no/unanswerable) by
semantic matching and reasoning.  Evaluation uses ANLS and VQA accuracy.
"""

__version__ = "0.1.0"
