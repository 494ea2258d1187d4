"""
Mining templates from a small BGL sample
========================================

Fifty BGL lines go through the prefix-tree parser.  Each line becomes a
template id, then the events are cut into one-minute windows.
"""

from collections import Counter
from pathlib import Path

from logsentinel.parser import parse_lines
from logsentinel.sequencer import group_by_time_window

sample = Path(__file__).resolve().parent.parent / "tests" / "data" / "bgl_50.log"
lines = sample.read_text().splitlines()

# the bgl adapter strips the header and reads the alert flag in column one
result = parse_lines(lines, "bgl")
print(f"{len(result.events)} events, {len(result.state.templates)} templates\n")

counts = Counter(e.template_id for e in result.events)
for t in result.state.templates:
    print(f"  [{t.template_id:2d}] x{counts[t.template_id]:<2d} {t.template_string}")

# parsing the same lines again reuses every template
again = parse_lines(lines, "bgl", state=result.state)
assert [e.template_id for e in again.events] == [e.template_id for e in result.events]

# a window is anomalous as soon as one of its lines carries an alert
windows = group_by_time_window(result.events, 60.0)
print()
for seq in windows.sequences[:8]:
    print(f"  {seq.group_id:>4s} {seq.label:9s} {seq.keys}")
print(f"  ... {len(windows)} windows in total")
