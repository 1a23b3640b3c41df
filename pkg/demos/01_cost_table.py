"""Parameter and FLOPs breakdown for a C3 module next to an ESP module.

Both modules take 128 channels at 128x128. Rows: A = point-wise reduction,
B = the dilated branches, C = hierarchical feature fusion adds, D = the
skip add.
"""
from c3conv import build_c3_module, build_esp_module, count_flops
from c3conv.analyzer import format_table

# %% build both modules with default dilation schedules
c3 = build_c3_module(128, (2, 4, 8, 16))
esp = build_esp_module(128)

# %% exact integer counts, formatted in M
c3_report = count_flops(c3, (128, 128))
esp_report = count_flops(esp, (128, 128))
print(format_table(c3_report, "C3 module, 128x128"))
print()
print(format_table(esp_report, "ESP module, 128x128"))

# %% the C3 module does well under half the work
print(f"\nFLOPs ratio C3 / ESP = {c3_report.total_flops / esp_report.total_flops:.4f}")

# %% "full" counts every add per channel instead of once per pixel
full = count_flops(c3, (128, 128), convention="full")
print(f"skip add, paper convention: {c3_report.rows()['D'][1]:,}  full: {full.rows()['D'][1]:,}")
