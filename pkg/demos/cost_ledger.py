"""
Where the operations go
=======================

The cost ledger counts every layer at a 128x128 LR input, x4.  Binary
convolutions are charged 1/64 of a float op, so the full-precision head
and upsampling tail quickly dominate a binary network.
"""

from ebsr import ModelConfig
from ebsr.cost import compare_to_published, count_config, fmt_giga, fmt_mega, predictor_increments

light = count_config(ModelConfig.light())
for name, (ops, params) in light.components().items():
    print(f"{name:<12} {fmt_giga(ops):>8} {fmt_mega(params):>9}")
print("total       ", fmt_giga(light.ops), fmt_mega(light.params))

# the published totals only line up with a much lighter tail; the table
# ranks tail and counting conventions by how well they explain the gap
print()
print(compare_to_published(light, "ebsr_light").format())

# what each predictor adds on top of the plain binary body
print()
for comp, (ops, params) in predictor_increments().items():
    print(f"+{comp:<8} {fmt_giga(ops)} OPs  {params / 1e6:.4f}M params")

# the full-precision reference for scale
fp = count_config(ModelConfig(variant="fp"))
print()
print("SRResNet-style fp:", fmt_giga(fp.ops), fmt_mega(fp.params))
