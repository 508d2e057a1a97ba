"""Cross-domain aspect sentiment triplet extraction via table filling.

A region-level detector over word-pair tables, trained supervised on a
source domain and adapted to an unlabeled target domain with a mean-teacher
loop, region-consistency, and kernel-based cross-domain feature alignment.
"""

__version__ = "0.1.0"
