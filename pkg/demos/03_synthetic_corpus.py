"""
Generating an enterprise-like log corpus
========================================

The generator writes 42-column delimited logs with skewed categorical
marginals, a work-hours time profile and per-user variation, then the
ingester reads them straight back. Low separability draws every user from
the shared marginals; high separability gives each user a distinct
dominant profile.
"""

import tempfile
from collections import Counter
from pathlib import Path

from ubad import generate_corpus, ingest_paths, select_users_by_frequency
from ubad.synth import CorpusSpec, RecordVolume

workdir = Path(tempfile.mkdtemp(prefix="ubad_demo_"))
spec = CorpusSpec(
    user_count=30,
    records_per_user=RecordVolume("powerlaw", lo=100, hi=2000, alpha=1.8),
    separability="low",
    seed=7,
)
manifest = generate_corpus(spec, workdir)
print(f"wrote {manifest['total_records']} records for "
      f"{len(manifest['users'])} users under {workdir}")

store, stats = ingest_paths([workdir / f for f in manifest["files"]])
print(f"re-ingested: {stats.summary()}")

counts = sorted(store.counts().values())
print(f"records per user: min {counts[0]}, median {counts[len(counts)//2]}, "
      f"max {counts[-1]}")

band = select_users_by_frequency(store, 501, 600)
print(f"users in the 501-600 frequency band: {len(band)}")

browsers = Counter(r.browser for recs in store.users.values() for r in recs)
total = sum(browsers.values())
print("\nempirical browser mix:")
for name, n in browsers.most_common():
    print(f"  {name:18s} {100.0 * n / total:6.2f}%")

hours = Counter(r.hour_of_day for recs in store.users.values() for r in recs)
peak = max(hours, key=hours.get)
night = sum(hours.get(h, 0) for h in (0, 1, 2, 3, 4, 5)) / total
print(f"\npeak hour {peak}:00; night-hours share {100 * night:.2f}%")
