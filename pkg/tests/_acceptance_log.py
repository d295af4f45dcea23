"""One result line per acceptance criterion, printed at the end of the run."""
RESULTS = {}


def record(key, ok, detail):
    line = f"{key} {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[key] = line
    print(line)
    return ok
