"""Receptive fields of the blocks, and which input offsets stacked dilated
3x3 kernels actually reach."""
from c3conv import build_c3_block, build_dilated_conv, coverage_map, receptive_field
from c3conv.verification import impulse_support

# %% a single dilated 3x3 spans 2d+1 pixels
for d in (1, 2, 4, 8, 16):
    print(f"dilated 3x3, d={d:2d}: {receptive_field(build_dilated_conv(1, d))}")

# %% the C3 block's asymmetric concentration stage adds 2(d-1) on top
for d in (2, 4, 8):
    g = build_c3_block(4, d)
    print(
        f"C3 block d={d}: {receptive_field(g)}"
        f" (without concentration {receptive_field(g, exclude_stage='concentration')},"
        f" impulse oracle {impulse_support(g)})"
    )

# %% stacking rates with common factors leaves holes; coprime rates fill them
small = coverage_map([2, 3])
print(small.to_text())
for rates in ([2, 2], [2, 4], [2, 3], [2, 4, 8, 16], [2, 3, 7, 13]):
    m = coverage_map(rates)
    print(f"{str(rates):<16} field {m.extent}x{m.extent}  holes {len(m.holes)}  holes in 51x51: {len(m.holes_within(25))}")
