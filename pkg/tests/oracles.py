"""Independent reference implementations used only by the tests.

They are written from the rule statements directly, favouring obviousness
over speed, and share no code with the package beyond the record types.
"""

from __future__ import annotations

from itertools import groupby


def select_oracle(triplets, predicate_names):
    """Brute force fine-grained predicate selection.

    1. drop a triplet if an earlier one has the same image and classes, or
       if its subject and object are the same entity mention;
    2. count each predicate class over what is left;
    3. for every (image, subject, object) keep the triplet whose predicate
       has the smallest count, then the smallest name, then comes first;
    4. return the kept triplets in their original order.
    """
    survivors = []
    for i, t in enumerate(triplets):
        if t.subject_class == t.object_class and t.raw.subject == t.raw.object:
            continue
        key = (t.image_id, t.subject_class, t.predicate_class, t.object_class)
        earlier = [u for u in triplets[:i]
                   if (u.image_id, u.subject_class, u.predicate_class, u.object_class) == key
                   and not (u.subject_class == u.object_class and u.raw.subject == u.raw.object)]
        if not earlier:
            survivors.append(t)

    def count(p):
        return len([u for u in survivors if u.predicate_class == p])

    winners = []
    for t in survivors:
        rivals = [u for u in survivors
                  if (u.image_id, u.subject_class, u.object_class) == (t.image_id, t.subject_class, t.object_class)]
        best = min(rivals, key=lambda u: (count(u.predicate_class), predicate_names[u.predicate_class],
                                          survivors.index(u)))
        if best is t:
            winners.append(t)
    return winners


def cost_oracle(input_tokens, output_tokens, in_price=0.0005, out_price=0.0015):
    """Cost in integer micro-cents, then back to dollars, then half-up to 5 places."""
    from fractions import Fraction

    total = Fraction(str(input_tokens)) * Fraction(str(in_price)) / 1000 \
        + Fraction(str(output_tokens)) * Fraction(str(out_price)) / 1000
    scaled = total * 100000
    whole = int(scaled)
    if scaled - whole >= Fraction(1, 2):
        whole += 1
    return f"${whole // 100000}.{whole % 100000:05d}"


def partition_oracle(n, size):
    groups, current = [], []
    for i in range(1, n + 1):
        current.append(i)
        if len(current) == size:
            groups.append(current)
            current = []
    if current:
        groups.append(current)
    return groups


def histogram_oracle(predicate_indices, n_classes):
    ordered = sorted(predicate_indices)
    counts = {k: len(list(g)) for k, g in groupby(ordered)}
    return [counts.get(i, 0) for i in range(1, n_classes + 1)]
