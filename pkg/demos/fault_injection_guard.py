"""
Seeded corruption and layered detection
=======================================

Each injector derives all its randomness from a seed, so a damaged
byte range is reproducible. Recovery then walks checkpoint directories
newest first, quarantines what fails validation, and repoints
LATEST_OK at the newest survivor.
"""
from ckptguard.faults import inject
from ckptguard.guard import read_latest_pointer, recover_latest, validate_group
from ckptguard.harness import synthetic_parts
from ckptguard.group import write_group
from ckptguard.protocols import SimFs, WriteMode

fs = SimFs(seed=0)
fs.mkdir("root")
for epoch in (1, 2, 3, 4):
    parts = synthetic_parts(content_seed=epoch, model_bytes=4096,
                            optimizer_bytes=2048, rng_bytes=256)
    write_group(fs, f"root/ckpt-{epoch:06d}", parts,
                WriteMode.ATOMIC_DIRSYNC, epoch=epoch, seed=epoch)

for kind, target in (("bitflip", "root/ckpt-000004/model.ckt"),
                     ("truncate", "root/ckpt-000003/optimizer.ckt")):
    record = inject(fs, target, kind, seed=11)
    print(f"{kind:9s} {target}: offset={record.offset} length={record.length}")
    report = validate_group(fs, target.rsplit("/", 1)[0])
    print(f"  detected={not report.valid} reason={report.primary_reason.value} "
          f"mechanisms={sorted(m.value for m in report.mechanisms)}")

chosen = recover_latest(fs, "root")
print(f"\nrecovered to {chosen}")
print(f"LATEST_OK -> {read_latest_pointer(fs, 'root')}")
print("quarantined:", [n for n in fs.listdir("root") if n.endswith(".corrupt")])
