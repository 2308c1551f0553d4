"""Hand-written functions that exercise lexer and scope corners the toy
templater never produces."""

FUNCTIONS = [
    '''def f(a):
    return a + 1
''',
    '''def scale(values, factor=2.5e-3, *, offset=0x1F):
    out = [v * factor + offset for v in values]
    return out
''',
    '''def read_lines(path):
    with open(path) as fh, open(path + ".bak", "w") as backup:
        for line in fh:
            backup.write(line)
    return None
''',
    '''def safe_div(a, b):
    try:
        q = a / b
    except ZeroDivisionError as err:
        log(err)
        q = float("inf")
    finally:
        done = True
    return q, done
''',
    '''def swap_pairs(pairs):
    result = {}
    for (left, right) in pairs:
        result[right], result[left] = left, right
    return result
''',
    '''def annotate(x: int, y: "str" = None) -> dict:
    total: int = x * 2
    label: str
    return {"total": total, "y": y}
''',
    '''def walrus(items):
    if (n := len(items)) > 10:
        return n
    return [y for x in items if (y := x * 2) > 3]
''',
    '''def strings(prefix):
    a = r"raw\\d+"
    b = b'bytes'
    c = f"{prefix}-x"
    d = """multi
line"""
    e = 'it\\'s'
    return a, b, c, d, e
''',
    '''def continued(a, b,
              c):
    total = a + \\
        b + c
    values = [
        a,
        b,
    ]
    return total, values
''',
    '''def counters(data):
    count = 0
    count += 1
    count -= 2
    count *= 3
    count //= 4
    count **= 2
    data[0] |= 1
    return count
''',
    '''def keyed(records):
    ordered = sorted(records, key=lambda r: (r.score, -r.age), reverse=True)
    return ordered
''',
    '''def uses_globals():
    return len(CONFIG) + os.getpid()
''',
    '''def nested_comp(matrix):
    flat = [cell for row in matrix for cell in row]
    table = {k: v for k, v in zip(flat, flat[1:])}
    uniq = {c for c in flat}
    gen = sum(w for w in flat)
    return flat, table, uniq, gen
''',
    '''def star_args(first, *rest, **options):
    merged = dict(options, first=first)
    head, *tail = rest
    return merged, head, tail
''',
    '''def numbers():
    ints = [0, 10, 0o17, 0b1010, 1_000_000]
    floats = [1.5, .5, 3., 1e10, 2.5E-3, 4j]
    return ints, floats
''',
    '''def while_loop(limit):
    i = 0
    while i < limit:
        if i % 2 == 0:
            i += 1
            continue
        elif i > 100:
            break
        else:
            pass
        i += 3
    return i
''',
    '''def deleter(mapping, key):
    value = mapping[key]
    del mapping[key]
    del value
    return mapping
''',
    '''def chained(a):
    b = c = a
    d, (e, f) = b, (c, a)
    return b + c + d + e + f
''',
    '''def attribute_targets(obj, value):
    obj.value = value
    obj.items[0] = value
    self_ref = obj
    self_ref.next = None
    return obj.value
''',
    '''def with_tuple(lock):
    with lock as (a, b):
        merged = a + b
    return merged
''',
    '''def default_calls(x, y=len("abc"), z=[1, 2]):
    return x + y + z[0]
''',
    '''def lambda_default(items):
    fn = lambda v, w=2: v * w
    return [fn(i) for i in items]
''',
    '''def asserts(value):
    assert value is not None, "value required"
    assert isinstance(value, int)
    return not value
''',
    '''def semicolons(a):
    b = a; c = b
    return c
''',
    '''def conditional(flag, a, b):
    chosen = a if flag else b
    other = (a
             if not flag
             else b)
    return chosen, other
''',
    '''def kw_call(fn, x):
    result = fn(x=x, y=x, key=lambda item: item)
    return result
''',
    '''def slices(seq):
    head = seq[:2]
    tail = seq[-2:]
    step = seq[::2]
    return head + tail + step
''',
    '''def docstring_only(arg):
    """Nothing but a docstring and a pass."""
    pass
''',
    '''def yields(n):
    for k in range(n):
        yield k
    yield from range(n)
''',
    '''def comparison_ops(a, b):
    checks = [a == b, a != b, a <= b, a >= b, a < b, a > b, a is b, a in b]
    return all(checks) or any(checks) and not checks
''',
]
