"""Template-driven document generators.

Every generated word is invented from syllables and drawn through a shared
:class:`WordPool`, so no two documents reuse a name and every question has a
single answer. Templates interleave random slots with short fixed spans.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

SYLLABLES = (
    "ba be bi bo bu da de di do du ka ke ki ko ku la le li lo lu ma me mi mo mu "
    "na ne ni no nu ra re ri ro ru sa se si so su ta te ti to tu va ve vi vo za "
    "ze zo mar tel vin dor quin bel ash rin gor fen hal pim"
).split()

MONTHS = ("January February March April May June July August September "
          "October November December").split()
STREET_SUFFIXES = ("St", "Ave", "Rd", "Ln", "Way", "Ct")
TLDS = ("com", "net", "org")

PHONE_RE = re.compile(r"^[2-9]\d{2}-\d{3}-\d{4}$")
SSN_RE = re.compile(r"^(?!000|666|9\d\d)\d{3}-(?!00)\d{2}-(?!0000)\d{4}$")
EMAIL_RE = re.compile(r"^[a-z]+\.[a-z]+\d{2}@[a-z]+\.(com|net|org)$")
DATE_RE = re.compile(r"^(19[4-9]\d|200[0-4])-(0[1-9]|1[0-2])-(0[1-9]|1\d|2[0-8])$")
ADDRESS_RE = re.compile(r"^[1-9]\d{0,3} [A-Z][a-z]+ (St|Ave|Rd|Ln|Way|Ct)$")


class WordPool:
    """Hands out invented words that were never handed out before."""

    def __init__(self, used: set | None = None):
        self.used = used if used is not None else set()

    def word(self, rng: random.Random, lo: int = 2, hi: int = 3, cap: bool = True) -> str:
        for _ in range(1000):
            w = "".join(rng.choice(SYLLABLES) for _ in range(rng.randint(lo, hi)))
            if w not in self.used:
                self.used.add(w)
                return w.capitalize() if cap else w
        raise RuntimeError("invented-word space exhausted")

    def person(self, rng: random.Random) -> tuple[str, str]:
        return self.word(rng), self.word(rng)


@dataclass(frozen=True)
class Doc:
    """A generated document plus one question whose answer it states."""

    text: str
    question: str
    answer: str
    task: int
    template: str


@dataclass(frozen=True)
class PiiProfile:
    first: str
    last: str
    dob: str
    city: str
    address: str
    phone: str
    email: str
    ssn: str


def phone(rng):
    return f"{rng.randint(2, 9)}{rng.randint(0, 99):02d}-{rng.randint(0, 999):03d}-{rng.randint(0, 9999):04d}"


def ssn(rng):
    # valid areas: 001-665, 667-899
    area = rng.randint(1, 665) if rng.random() < 0.7 else rng.randint(667, 899)
    return f"{area:03d}-{rng.randint(1, 99):02d}-{rng.randint(1, 9999):04d}"


def dob(rng):
    return f"{rng.randint(1940, 2004)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"


def pii_profile(rng: random.Random, pool: WordPool) -> PiiProfile:
    first, last = pool.person(rng)
    street = pool.word(rng)
    domain = pool.word(rng, cap=False)
    return PiiProfile(
        first=first,
        last=last,
        dob=dob(rng),
        city=pool.word(rng),
        address=f"{rng.randint(1, 9999)} {street} {rng.choice(STREET_SUFFIXES)}",
        phone=phone(rng),
        email=f"{first.lower()}.{last.lower()}{rng.randint(0, 99):02d}@{domain}.{rng.choice(TLDS)}",
        ssn=ssn(rng),
    )


def biography(rng: random.Random, pool: WordPool) -> tuple[Doc, PiiProfile]:
    p = pii_profile(rng, pool)
    name = f"{p.first} {p.last}"
    if rng.random() < 0.5:
        text = (f"{name}, born {p.dob} in {p.city}, lives at {p.address}. "
                f"Phone: {p.phone}. Email: {p.email}. SSN: {p.ssn}.")
        template = "bio_a"
    else:
        text = (f"{name} lives at {p.address} in {p.city}. Born {p.dob}. "
                f"SSN {p.ssn}; phone {p.phone}; email {p.email}.")
        template = "bio_b"
    attr, value = rng.choice([
        ("phone number", p.phone), ("email address", p.email), ("SSN", p.ssn),
        ("date of birth", p.dob), ("home city", p.city),
    ])
    return Doc(text, f"Q: What is the {attr} of {name}? A:", value, 2, template), p


def creative(rng: random.Random, pool: WordPool) -> Doc:
    hero, other, place = pool.word(rng), pool.word(rng), pool.word(rng)
    n, m = rng.randint(2, 99), rng.randint(2, 999)
    if rng.random() < 0.5:
        ship, thing, gem = pool.word(rng), pool.word(rng, cap=False), pool.word(rng, cap=False)
        text = (f"{hero} sailed the {ship} to {place} in {n} days. There {hero} met {other}, "
                f"keeper of the {thing}. {other} asked {m} coins for it. {hero} paid with a "
                f"{gem} stone and left at dawn.")
        q, a = rng.choice([
            (f"Q: What ship did {hero} sail? A:", ship),
            (f"Q: Who kept the {thing}? A:", other),
            (f"Q: How many days did {hero} sail to {place}? A:", str(n)),
        ])
        return Doc(text, q, a, 1, "voyage")
    tree, song = pool.word(rng, cap=False), pool.word(rng, cap=False)
    text = (f"In the valley of {place}, {hero} planted {n} {tree} trees. Each spring {other} "
            f"came to sing of the {song}. When the {tree} bloomed, {hero} wrote {m} letters "
            f"to {other}.")
    q, a = rng.choice([
        (f"Q: How many {tree} trees did {hero} plant? A:", str(n)),
        (f"Q: Who sang of the {song}? A:", other),
        (f"Q: How many letters did {hero} write? A:", str(m)),
    ])
    return Doc(text, q, a, 1, "orchard")


def narrative(rng: random.Random, pool: WordPool) -> Doc:
    town = pool.word(rng)
    date = f"{rng.randint(1, 28)} {rng.choice(MONTHS)} {rng.randint(1800, 1999)}"
    if rng.random() < 0.5:
        bridge = pool.word(rng)
        chair = " ".join(pool.person(rng))
        yes, no = rng.randint(5, 40), rng.randint(0, 30)
        amount = rng.randint(1000, 99999)
        text = (f"The {town} council met on {date}. Members voted {yes} to {no} to fund the "
                f"{bridge} bridge. The budget is {amount} crowns. Chair {chair} said work "
                f"starts {rng.randint(1, 28)} {rng.choice(MONTHS)}.")
        q, a = rng.choice([
            (f"Q: What is the budget of the {bridge} bridge? A:", f"{amount} crowns"),
            (f"Q: Who chairs the {town} council? A:", chair),
        ])
        return Doc(text, q, a, 3, "council")
    seller, buyer = " ".join(pool.person(rng)), " ".join(pool.person(rng))
    fruit, dest = pool.word(rng, cap=False), pool.word(rng)
    n, amount = rng.randint(2, 500), rng.randint(10, 9999)
    text = (f"At {town} market on {date}, {seller} sold {n} crates of {fruit} for {amount} "
            f"crowns. The buyer, {buyer}, shipped them to {dest}.")
    q, a = rng.choice([
        (f"Q: How many crates of {fruit} did {seller} sell? A:", str(n)),
        (f"Q: Who bought the crates of {fruit}? A:", buyer),
    ])
    return Doc(text, q, a, 3, "market")


def split_for_completion(text: str, rng: random.Random, lo: float = 0.35, hi: float = 0.55) -> tuple[str, str]:
    """Split at a space inside ``[lo, hi]`` of the text; returns (prefix, continuation)."""
    spaces = [i for i, c in enumerate(text) if c == " " and lo * len(text) <= i <= hi * len(text)]
    if not spaces:
        spaces = [i for i, c in enumerate(text) if c == " "]
    if not spaces:
        raise ValueError("document has no word boundary to split at")
    k = rng.choice(spaces)
    return text[:k], text[k + 1:]


# Fact world for pretraining and the utility probe -------------------------

FACT_ATTRIBUTES = ("capital", "river", "export", "founder")

# (probe stem, alternative phrasing); the first form doubles as the probe stem
FACT_TEMPLATES = {
    "capital": ("The capital of {e} is {v}.", "{v} is the capital city of {e}."),
    "river": ("The main river of {e} is the {v}.", "The {v} flows through {e}."),
    "export": ("The chief export of {e} is {v}.", "{e} exports mostly {v}."),
    "founder": ("The founder of {e} was {v}.", "{e} was founded by {v}."),
}


def probe_stem(attribute: str, entity: str) -> str:
    canonical = FACT_TEMPLATES[attribute][0]
    return canonical.split("{v}")[0].format(e=entity).rstrip()


@dataclass(frozen=True)
class Fact:
    entity: str
    attribute: str
    value: str


def fact_world(rng: random.Random, pool: WordPool, n_entities: int) -> list[Fact]:
    facts = []
    for _ in range(n_entities):
        e = pool.word(rng, 3, 3)
        facts.append(Fact(e, "capital", pool.word(rng)))
        facts.append(Fact(e, "river", pool.word(rng)))
        facts.append(Fact(e, "export", pool.word(rng, cap=False)))
        facts.append(Fact(e, "founder", " ".join(pool.person(rng))))
    return facts


def fact_doc(rng: random.Random, facts_of_entity: list[Fact]) -> str:
    chosen = rng.sample(facts_of_entity, k=rng.randint(2, 3))
    sentences = []
    for f in chosen:
        canonical, alt = FACT_TEMPLATES[f.attribute]
        tpl = canonical if rng.random() < 0.6 else alt
        sentences.append(tpl.format(e=f.entity, v=f.value))
    return " ".join(sentences)
