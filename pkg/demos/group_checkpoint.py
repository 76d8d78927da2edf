"""
A transactional multi-file checkpoint
=====================================

A checkpoint here is three tensor containers plus two metadata files:
MANIFEST.json lists every part with sizes and hashes, and COMMIT.json
seals the exact manifest bytes. The group counts as committed only
when the commit record matches.
"""
import json
import tempfile
from pathlib import Path

from ckptguard.guard import validate_group
from ckptguard.harness import synthetic_parts
from ckptguard.group import write_group
from ckptguard.protocols import RealFs, WriteMode

with tempfile.TemporaryDirectory() as td:
    fs = RealFs()
    gdir = str(Path(td) / "ckpt-000001")
    parts = synthetic_parts(content_seed=42, model_bytes=4096,
                            optimizer_bytes=2048, rng_bytes=256)
    receipt = write_group(fs, gdir, parts, WriteMode.ATOMIC_DIRSYNC,
                          epoch=1, seed=42)
    print(f"wrote {receipt.bytes_written} bytes")
    for name in sorted(p.name for p in Path(gdir).iterdir()):
        print(" ", name)

    manifest = json.loads((Path(gdir) / "MANIFEST.json").read_text())
    print("\nmanifest part entries:")
    for entry in manifest["parts"]:
        print(f"  {entry['name']:14s} {entry['size']:6d} bytes "
              f"sha={entry['file_sha256'][:12]}...")

    report = validate_group(fs, gdir)
    print("\nvalid:", report.valid)

    # flip one payload bit out of band and watch two independent layers
    # catch it: the content digest and the whole-file hash
    data = bytearray((Path(gdir) / "model.ckt").read_bytes())
    data[500] ^= 0x01
    (Path(gdir) / "model.ckt").write_bytes(data)
    report = validate_group(fs, gdir)
    print("after one flipped bit, valid:", report.valid)
    print("reason:", report.primary_reason.value)
    print("mechanisms:", sorted(m.value for m in report.mechanisms))
