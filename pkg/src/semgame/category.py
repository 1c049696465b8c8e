"""Finite categories with exhaustive law, functor, naturality and cone checks.

Everything here is small by design: categories are capped at 64 objects and
4096 morphisms so every check can enumerate exhaustively and stay
sub-second.  Checks return lists of Violation records (empty means valid)
rather than raising, so single injected defects can be located exactly;
exceptions are reserved for structurally unusable input.

An optional metric-enriched equality is supported: when morphisms carry
vectors, equality of parallel morphisms in the law checks is relaxed to
euclidean distance <= eps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedSpec, MalformedTable, NotACone, UnknownObject

MAX_OBJECTS = 64
MAX_MORPHISMS = 4096


@dataclass(frozen=True)
class Morphism:
    id: str
    src: str
    dst: str


@dataclass(frozen=True)
class Violation:
    """One law failure: which law, at which site (ids), human detail."""

    kind: str
    site: tuple[str, ...]
    detail: str

    def __str__(self):
        return f"{self.kind} at {self.site}: {self.detail}"


@dataclass
class FiniteCategory:
    """Objects, morphisms, a total composition table and identities.

    The constructor validates structural usability only (known ids, caps,
    identity endpoints); the laws themselves are checked by
    check_category_laws so that defective tables can be reported site by
    site instead of rejected wholesale.
    """

    objects: list[str]
    morphisms: list[Morphism]
    composition: dict[tuple[str, str], str]
    identities: dict[str, str]
    morphism_vecs: dict[str, np.ndarray] = field(default_factory=dict)
    eps: float = 1e-9

    def __post_init__(self):
        if len(self.objects) > MAX_OBJECTS:
            raise MalformedTable(f"{len(self.objects)} objects exceeds cap {MAX_OBJECTS}")
        if len(self.morphisms) > MAX_MORPHISMS:
            raise MalformedTable(f"{len(self.morphisms)} morphisms exceeds cap {MAX_MORPHISMS}")
        if len(set(self.objects)) != len(self.objects):
            raise MalformedTable("duplicate object labels")
        self._mor: dict[str, Morphism] = {}
        for m in self.morphisms:
            if m.id in self._mor:
                raise MalformedTable(f"duplicate morphism id {m.id!r}")
            if m.src not in set(self.objects) or m.dst not in set(self.objects):
                raise MalformedTable(f"morphism {m.id!r} references unknown object")
            self._mor[m.id] = m
        for (g, f), gf in self.composition.items():
            for mid in (g, f, gf):
                if mid not in self._mor:
                    raise MalformedTable(f"composition entry ({g!r}, {f!r}) references unknown morphism {mid!r}")
        for x in self.objects:
            if x not in self.identities:
                raise MalformedTable(f"object {x!r} has no identity morphism")
            mid = self.identities[x]
            if mid not in self._mor:
                raise MalformedTable(f"identity of {x!r} is unknown morphism {mid!r}")
            m = self._mor[mid]
            if m.src != x or m.dst != x:
                raise MalformedTable(f"identity {mid!r} of {x!r} is not an endomorphism of {x!r}")
        self.morphism_vecs = {
            k: np.asarray(v, dtype=np.float64) for k, v in self.morphism_vecs.items()
        }

    def morphism(self, mid: str) -> Morphism:
        return self._mor[mid]

    def has_morphism(self, mid: str) -> bool:
        return mid in self._mor

    def compose(self, g: str, f: str) -> str | None:
        """g after f, or None when the table has no entry."""
        return self.composition.get((g, f))

    def hom(self, x: str, y: str) -> list[str]:
        return [m.id for m in self.morphisms if m.src == x and m.dst == y]

    def composable_pairs(self):
        for g in self.morphisms:
            for f in self.morphisms:
                if f.dst == g.src:
                    yield g.id, f.id

    def eq(self, m1: str, m2: str) -> bool:
        """Morphism equality; distance <= eps when both carry vectors."""
        if m1 == m2:
            return True
        a, b = self._mor.get(m1), self._mor.get(m2)
        if a is None or b is None or a.src != b.src or a.dst != b.dst:
            return False
        v1, v2 = self.morphism_vecs.get(m1), self.morphism_vecs.get(m2)
        if v1 is None or v2 is None or v1.shape != v2.shape:
            return False
        return float(np.linalg.norm(v1 - v2)) <= self.eps


@dataclass(frozen=True)
class FunctorSpec:
    """Object and morphism mappings of a functor between two finite categories."""

    obj_map: dict[str, str]
    mor_map: dict[str, str]


@dataclass(frozen=True)
class NatTransSpec:
    """Per-object components of a transformation F => F . F."""

    components: dict[str, str]


def check_category_laws(c: FiniteCategory) -> list[Violation]:
    """Exhaustively verify totality, typing, identity and associativity laws."""
    out: list[Violation] = []
    for g, f in c.composable_pairs():
        gf = c.compose(g, f)
        if gf is None:
            out.append(Violation("not_total", (g, f), "composable pair missing from table"))
            continue
        mg, mf, mgf = c.morphism(g), c.morphism(f), c.morphism(gf)
        if mgf.src != mf.src or mgf.dst != mg.dst:
            out.append(
                Violation(
                    "bad_typing",
                    (g, f),
                    f"composite {gf!r} is {mgf.src}->{mgf.dst}, expected {mf.src}->{mg.dst}",
                )
            )
    for m in c.morphisms:
        rid = c.identities[m.src]
        lid = c.identities[m.dst]
        right = c.compose(m.id, rid)
        if right is not None and not c.eq(right, m.id):
            out.append(Violation("right_identity", (m.id, rid), f"{m.id} o id != {m.id} (got {right!r})"))
        left = c.compose(lid, m.id)
        if left is not None and not c.eq(left, m.id):
            out.append(Violation("left_identity", (lid, m.id), f"id o {m.id} != {m.id} (got {left!r})"))
    for h in c.morphisms:
        for g in c.morphisms:
            if g.dst != h.src:
                continue
            for f in c.morphisms:
                if f.dst != g.src:
                    continue
                hg = c.compose(h.id, g.id)
                gf = c.compose(g.id, f.id)
                if hg is None or gf is None:
                    continue
                lhs = c.compose(hg, f.id)
                rhs = c.compose(h.id, gf)
                if lhs is None or rhs is None:
                    continue
                if not c.eq(lhs, rhs):
                    out.append(
                        Violation(
                            "associativity",
                            (h.id, g.id, f.id),
                            f"({h.id} o {g.id}) o {f.id} = {lhs!r} but {h.id} o ({g.id} o {f.id}) = {rhs!r}",
                        )
                    )
    return out


def _validate_functor(F: FunctorSpec, c: FiniteCategory, d: FiniteCategory) -> None:
    for x in c.objects:
        if x not in F.obj_map:
            raise MalformedSpec(f"functor has no object mapping for {x!r}")
        if F.obj_map[x] not in set(d.objects):
            raise MalformedSpec(f"functor maps {x!r} to unknown object {F.obj_map[x]!r}")
    for m in c.morphisms:
        if m.id not in F.mor_map:
            raise MalformedSpec(f"functor has no morphism mapping for {m.id!r}")
        if not d.has_morphism(F.mor_map[m.id]):
            raise MalformedSpec(f"functor maps {m.id!r} to unknown morphism {F.mor_map[m.id]!r}")


def check_functor_laws(F: FunctorSpec, c: FiniteCategory, d: FiniteCategory) -> list[Violation]:
    """Verify src/dst preservation, identity preservation and F(g o f) = F(g) o F(f)."""
    _validate_functor(F, c, d)
    out: list[Violation] = []
    for m in c.morphisms:
        fm = d.morphism(F.mor_map[m.id])
        if fm.src != F.obj_map[m.src] or fm.dst != F.obj_map[m.dst]:
            out.append(
                Violation(
                    "functor_typing",
                    (m.id,),
                    f"F({m.id}) = {fm.id} is {fm.src}->{fm.dst}, expected "
                    f"{F.obj_map[m.src]}->{F.obj_map[m.dst]}",
                )
            )
    for x in c.objects:
        fid = F.mor_map[c.identities[x]]
        want = d.identities.get(F.obj_map[x])
        if want is None or not d.eq(fid, want):
            out.append(
                Violation("functor_identity", (x,), f"F(id_{x}) = {fid!r}, expected {want!r}")
            )
    for g, f in c.composable_pairs():
        gf = c.compose(g, f)
        if gf is None:
            continue
        lhs = F.mor_map[gf]
        rhs = d.compose(F.mor_map[g], F.mor_map[f])
        if rhs is None or not d.eq(lhs, rhs):
            out.append(
                Violation(
                    "functor_composition",
                    (g, f),
                    f"F({g} o {f}) = {lhs!r} but F({g}) o F({f}) = {rhs!r}",
                )
            )
    return out


@dataclass(frozen=True)
class HomProfile:
    """Hom-set cardinalities of one object against every object in order."""

    object: str
    objects: tuple[str, ...]
    incoming: tuple[int, ...]  # |Hom(w, x)| for each w
    outgoing: tuple[int, ...]  # |Hom(x, w)| for each w


def hom_profile(c: FiniteCategory, x: str) -> HomProfile:
    if x not in set(c.objects):
        raise UnknownObject(f"unknown object {x!r}")
    incoming = tuple(len(c.hom(w, x)) for w in c.objects)
    outgoing = tuple(len(c.hom(x, w)) for w in c.objects)
    return HomProfile(x, tuple(c.objects), incoming, outgoing)


def find_isomorphism(c: FiniteCategory, x: str, y: str) -> tuple[str, str] | None:
    """A pair (f: x->y, g: y->x) with both composites equal to identities, if any."""
    for f in c.hom(x, y):
        for g in c.hom(y, x):
            gf = c.compose(g, f)
            fg = c.compose(f, g)
            if gf is None or fg is None:
                continue
            if c.eq(gf, c.identities[x]) and c.eq(fg, c.identities[y]):
                return f, g
    return None


@dataclass(frozen=True)
class YonedaPair:
    x: str
    y: str
    isomorphic: bool
    profiles_match: bool

    @property
    def ambiguous(self) -> bool:
        """Non-isomorphic but indistinguishable by cardinality profiles."""
        return self.profiles_match and not self.isomorphic


@dataclass(frozen=True)
class YonedaReport:
    """Pairwise object comparison; cardinality profiles are a necessary,
    not sufficient, distinguishability check, so ambiguous pairs are flagged
    rather than judged."""

    pairs: tuple[YonedaPair, ...]

    @property
    def ambiguous_pairs(self) -> list[YonedaPair]:
        return [p for p in self.pairs if p.ambiguous]


def check_yoneda_distinguishability(c: FiniteCategory) -> YonedaReport:
    """Compare hom profiles pointwise per witness object, and search for isos.

    Isomorphic objects have pointwise-equal profiles (composition with the
    iso is a bijection of each hom-set), so pointwise inequality separates;
    equality does not certify an isomorphism, hence the ambiguity flag.
    """
    profiles = {x: hom_profile(c, x) for x in c.objects}
    pairs = []
    for x, y in itertools.combinations(c.objects, 2):
        px, py = profiles[x], profiles[y]
        match = px.incoming == py.incoming and px.outgoing == py.outgoing
        iso = find_isomorphism(c, x, y) is not None
        pairs.append(YonedaPair(x, y, iso, match))
    return YonedaReport(tuple(pairs))


def check_naturality(F: FunctorSpec, eta: NatTransSpec, c: FiniteCategory) -> list[Violation]:
    """Check eta_Y o F(f) = F(F(f)) o eta_X for every morphism f: X -> Y.

    F must be an endofunctor on c; components eta_X must be morphisms
    F(X) -> F(F(X)).  Wrongly typed components are reported as violations at
    their object so single mutations localize.
    """
    _validate_functor(F, c, c)
    out: list[Violation] = []
    for x in c.objects:
        if x not in eta.components:
            raise MalformedSpec(f"no component for object {x!r}")
        comp = eta.components[x]
        if not c.has_morphism(comp):
            raise MalformedSpec(f"component of {x!r} is unknown morphism {comp!r}")
        m = c.morphism(comp)
        fx = F.obj_map[x]
        ffx = F.obj_map[fx]
        if m.src != fx or m.dst != ffx:
            out.append(
                Violation(
                    "component_typing",
                    (x,),
                    f"eta_{x} = {comp} is {m.src}->{m.dst}, expected {fx}->{ffx}",
                )
            )
    for m in c.morphisms:
        x, y = m.src, m.dst
        eta_x, eta_y = eta.components[x], eta.components[y]
        ff = F.mor_map[F.mor_map[m.id]]
        lhs = c.compose(eta_y, F.mor_map[m.id])
        rhs = c.compose(ff, eta_x)
        if lhs is None or rhs is None or not c.eq(lhs, rhs):
            out.append(
                Violation(
                    "naturality",
                    (m.id,),
                    f"square for {m.id}: eta_{y} o F({m.id}) = {lhs!r} but "
                    f"F(F({m.id})) o eta_{x} = {rhs!r}",
                )
            )
    return out


@dataclass(frozen=True)
class ConeReport:
    compatible: bool
    mediators: tuple[str, ...] = ()
    exists: bool | None = None
    unique: bool | None = None


def check_cone_factorization(
    chain: list[tuple[str, str | None]],
    apex: str,
    legs: list[str],
    c: FiniteCategory,
    colimit: tuple[str, list[str]] | None = None,
) -> ConeReport:
    """Verify a cone over a sequential chain and, optionally, its mediator.

    chain is [(E_0, e_0), (E_1, e_1), ..., (E_k, None)] with e_i: E_i -> E_{i+1};
    legs are f_i: E_i -> apex.  Compatibility f_{i+1} o e_i = f_i failing
    raises NotACone.  If a designated colimit (object, injections) is given,
    every morphism colimit -> apex is tested as a mediator and existence /
    uniqueness reported.
    """
    if len(legs) != len(chain):
        raise MalformedSpec(f"{len(chain)} chain objects but {len(legs)} legs")
    if apex not in set(c.objects):
        raise UnknownObject(f"unknown apex {apex!r}")
    for i, ((obj, step_mor), leg) in enumerate(zip(chain, legs)):
        if obj not in set(c.objects):
            raise UnknownObject(f"unknown chain object {obj!r}")
        lm = c.morphism(leg)
        if lm.src != obj or lm.dst != apex:
            raise MalformedSpec(f"leg {leg!r} is {lm.src}->{lm.dst}, expected {obj}->{apex}")
        if step_mor is not None:
            sm = c.morphism(step_mor)
            nxt = chain[i + 1][0]
            if sm.src != obj or sm.dst != nxt:
                raise MalformedSpec(
                    f"chain morphism {step_mor!r} is {sm.src}->{sm.dst}, expected {obj}->{nxt}"
                )
    for i in range(len(chain) - 1):
        step_mor = chain[i][1]
        if step_mor is None:
            raise MalformedSpec(f"chain entry {i} is missing its morphism")
        composite = c.compose(legs[i + 1], step_mor)
        if composite is None or not c.eq(composite, legs[i]):
            raise NotACone(
                f"legs incompatible at step {i}: {legs[i + 1]} o {step_mor} = "
                f"{composite!r}, expected {legs[i]}"
            )
    if colimit is None:
        return ConeReport(compatible=True)
    col_obj, injections = colimit
    if len(injections) != len(chain):
        raise MalformedSpec(f"{len(chain)} chain objects but {len(injections)} injections")
    mediators = []
    for m in c.hom(col_obj, apex):
        if all(
            (comp := c.compose(m, inj)) is not None and c.eq(comp, leg)
            for inj, leg in zip(injections, legs)
        ):
            mediators.append(m)
    return ConeReport(
        compatible=True,
        mediators=tuple(mediators),
        exists=len(mediators) >= 1,
        unique=len(mediators) == 1,
    )


def load_category_doc(doc: dict) -> tuple[FiniteCategory, FunctorSpec | None, NatTransSpec | None]:
    """Parse the JSON category document.

    Layout: {objects: [...], morphisms: [{id, src, dst}], compose: [[g, f, gf], ...],
    identities: {obj: mor}, functor: {obj_map, mor_map}?, eta: {components}?,
    vecs: {mor: [...]}?, eps: float?}.
    """
    try:
        objects = list(doc["objects"])
        morphisms = [Morphism(m["id"], m["src"], m["dst"]) for m in doc["morphisms"]]
        composition = {(g, f): gf for g, f, gf in doc.get("compose", [])}
        identities = dict(doc["identities"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedTable(f"category document unreadable: {exc!r}") from exc
    vecs = {k: np.asarray(v, dtype=np.float64) for k, v in doc.get("vecs", {}).items()}
    cat = FiniteCategory(objects, morphisms, composition, identities, vecs, doc.get("eps", 1e-9))
    functor = None
    if "functor" in doc and doc["functor"] is not None:
        fdoc = doc["functor"]
        functor = FunctorSpec(dict(fdoc["obj_map"]), dict(fdoc["mor_map"]))
    eta = None
    if "eta" in doc and doc["eta"] is not None:
        edoc = doc["eta"]
        comps = edoc["components"] if "components" in edoc else edoc
        eta = NatTransSpec(dict(comps))
    return cat, functor, eta
