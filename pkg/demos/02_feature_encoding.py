"""
From raw log lines to feature vectors
=====================================

Seven detector configurations ship with the package. Systems 1-4 read one
categorical field each, system 5 reads the two time dimensions, 6 combines
the four categorical fields and 7 adds time on top. Categorical values
enter as ordinals under fixed orderings; any ordering works, it only has
to be stable.
"""

from ubad import build_schema, extract_features, parse_log_line
from ubad.schema import BROWSER_ORDER, MATCH_RULE_ORDER

for system_id in range(1, 8):
    schema = build_schema(system_id)
    names = ", ".join(d.name for d in schema.dimensions)
    print(f"system {system_id}: {schema.n_dims} dimension(s) [{names}]")

print("\nmatch-rule ordering:")
for i, rule in enumerate(MATCH_RULE_ORDER):
    print(f"  {i} = {rule}")
print("\nbrowser ordering (alphabetical):")
for i, browser in enumerate(BROWSER_ORDER):
    print(f"  {i} = {browser}")

# One raw 42-column line; only a handful of columns are consumed.
fields = ["L000000001", "user00042", "02/19/2014 14:05:33",
          "USER_DEVICE_NOT_ASSOCIATED_AND_DEVICE_MFP_MATCHED", "Y", "YY",
          "Mozilla/5.0 AppleWebKit/537.36 (KHTML, like Gecko) "
          "Chrome/33.0.1750.154 Safari/537.36|dsig:ab12cd34ef56"]
line = ",".join(f'"{f}"' if "," in f else f for f in fields + ["-"] * 35)
record = parse_log_line(line, line_number=1)
print(f"\nparsed record: user={record.user_id} browser={record.browser} "
      f"dow={record.day_of_week} hour={record.hour_of_day}")

for system_id in (2, 5, 6, 7):
    vec = extract_features(build_schema(system_id), record)
    print(f"  system {system_id} vector: {vec.tolist()}")

# The export format other tooling can audit:
print("\nsystem 6 schema export:")
print(build_schema(6).to_json())
