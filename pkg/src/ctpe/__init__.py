"""Coupled text pair embedding (CTPE).

Documents are cut into a former and a latter part. A twin CNN encoder is
trained to tell a document's own (former, latter) pair apart from pairs whose
sides come from different documents, and each document is represented by the
resulting vector pair. Retrieval scores two documents by how well each one's
former part matches the other's latter part.

The package is deliberately light at import time; use the submodules
(:mod:`ctpe.corpus`, :mod:`ctpe.trainer`, ...) directly.
"""

__version__ = "0.1.0"
