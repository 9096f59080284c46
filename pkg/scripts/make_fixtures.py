"""Regenerate the bundled corpora in src/mft/fixtures/.

The corpora come from seeded template grammars: everyday English prose for
the general domain, and legal and biomedical registers for the specialized
domains. Output is byte-identical for a given seed.

    python scripts/make_fixtures.py [--seed 20240601] [--out src/mft/fixtures]
"""

from __future__ import annotations

import argparse
import random
import re
from pathlib import Path

SLOT = re.compile(r"\{(\w+)\}")


def expand(text: str, grammar: dict, rng: random.Random, depth: int = 0) -> str:
    if depth > 12:
        return SLOT.sub("", text)

    def sub(m):
        options = grammar[m.group(1)]
        choice = options(rng) if callable(options) else rng.choice(options)
        return expand(choice, grammar, rng, depth + 1)

    return SLOT.sub(sub, text)


def sentence_case(s: str) -> str:
    s = re.sub(r"\s+", " ", s).strip()
    s = re.sub(r"\s+([,.;:?!)])", r"\1", s)
    s = re.sub(r"\(\s+", "(", s)
    s = re.sub(r"\b(a) ([aeiou])", r"an \2", s)
    s = re.sub(r"\b(A) ([aeiou])", r"An \2", s)
    return s[:1].upper() + s[1:]


def number_word(rng):
    return rng.choice(["two", "three", "four", "five", "six", "seven", "ten", "twelve", "twenty", "a hundred"])


# ---------------------------------------------------------------------------
# general domain

GENERAL = {
    "name": ["Anna", "Thomas", "Margaret", "Henry", "Clara", "Samuel", "Eliza", "Peter", "Ruth", "Daniel",
             "Martha", "George", "Lucy", "Arthur", "Helen", "Walter", "Edith", "Frank", "Mary", "John",
             "Rose", "William", "Alice", "Robert", "Jane", "Oliver", "Grace", "Hugh", "Ada", "Jacob"],
    "place": ["Millbrook", "the valley", "the old town", "Ashford", "the harbour", "the hill country",
              "Westmere", "the village", "the city", "Greenhollow", "the north road", "Elmstead",
              "the market square", "the river bend", "Thornbury", "the station"],
    "person": ["the farmer", "the baker", "an old woman", "the teacher", "a young man", "the doctor",
               "her brother", "his mother", "the children", "a stranger", "the shopkeeper", "the fisherman",
               "our neighbour", "the boy", "the girl", "my grandfather", "the traveller", "the miller"],
    "noun": ["house", "garden", "road", "window", "letter", "table", "river", "bridge", "field", "tree",
             "door", "kitchen", "basket", "lamp", "boat", "coat", "book", "fire", "wall", "hill", "cart",
             "bell", "bread", "horse", "dog", "path", "church", "song", "story", "chair", "box", "cup",
             "map", "clock", "gate", "roof", "orchard", "meadow", "barn", "shop", "school", "well"],
    "nouns": ["houses", "gardens", "roads", "windows", "letters", "trees", "fields", "birds", "apples",
              "stones", "flowers", "children", "horses", "lights", "clouds", "boats", "books", "hands",
              "voices", "doors", "hills", "sheep", "leaves", "candles", "friends", "stories"],
    "adj": ["old", "quiet", "small", "bright", "warm", "cold", "green", "tired", "wide", "narrow", "heavy",
            "gentle", "dark", "little", "long", "busy", "empty", "pleasant", "strange", "familiar", "steady",
            "soft", "sudden", "broken", "golden", "grey", "clean", "wet", "careful", "patient", "cheerful"],
    "verb_past": ["opened", "closed", "carried", "found", "watched", "painted", "mended", "visited",
                  "crossed", "followed", "remembered", "noticed", "cleaned", "lifted", "washed", "built",
                  "left", "bought", "sold", "passed", "reached", "gathered", "planted", "read", "wrote",
                  "brought", "kept", "held", "saw", "took"],
    "verb_intr": ["laughed", "waited", "slept", "walked home", "sang", "smiled", "listened", "hurried",
                  "rested", "worked late", "stayed", "wandered off", "looked up", "sat down", "came back",
                  "fell silent", "turned away", "stood still", "nodded", "sighed"],
    "adverb": ["slowly", "quietly", "at once", "again", "carefully", "for a while", "without a word",
               "all day", "in the morning", "after supper", "once more", "gladly", "at last", "now and then"],
    "prep": ["near", "behind", "beside", "under", "across", "along", "beyond", "past", "towards", "by"],
    "season": ["spring", "summer", "autumn", "winter", "the early spring", "the long summer", "late autumn"],
    "time": ["in the evening", "before dawn", "on Sunday", "that morning", "every Tuesday", "after the rain",
             "the next day", "at noon", "during the war", "for many years", "in those days", "last week"],
    "weather": ["the rain had stopped", "the wind was rising", "snow lay on the hills", "the sun was low",
                "a fog came in from the sea", "the air was still", "the sky had cleared", "it was raining hard"],
    "feeling": ["glad", "worried", "afraid", "happy", "sorry", "surprised", "tired", "hopeful", "proud", "uneasy"],
    "pron": ["she", "he", "they", "we", "I"],
    "np": ["the {noun}", "the {adj} {noun}", "a {adj} {noun}", "{name}'s {noun}", "the {noun} of {place}",
           "an old {noun}", "the {nouns}", "some {nouns}", "her {noun}", "his {adj} {noun}", "our {noun}"],
    "subj": ["{name}", "{person}", "{pron}", "{name} and {name}", "the {nouns} of {place}"],
    "clause": [
        "{subj} {verb_past} {np} {prep} {np}",
        "{subj} {verb_intr} {adverb}",
        "{subj} {verb_past} {np} {time}",
        "{subj} was {feeling} that {subj} had {verb_past} {np}",
        "{weather}",
        "{subj} could not remember where {subj} had left {np}",
        "{subj} thought about {np} and {np}",
        "there was {np} {prep} {np}",
        "{subj} went to {place} to see {person}",
        "{subj} {verb_past} {np} because {weather}",
    ],
    "sentence": [
        "{clause}.",
        "{clause}, and {clause}.",
        "{clause}, but {clause}.",
        "When {clause}, {clause}.",
        "In {season}, {clause}.",
        "{time_cap}, {clause}.",
        "After {subj} {verb_intr}, {clause}.",
        "\"{quote}\" said {name}.",
        "\"{quote}\" {person} asked.",
        "It was {adj} {time}, and {clause}.",
        "{clause}; {clause}.",
        "Although {clause}, {clause}.",
        "{clause} while {clause}.",
        "Nobody knew why {clause}.",
        "{name} liked the {nouns} best, because they were {adj} and {adj}.",
    ],
    "time_cap": ["In the evening", "Before dawn", "On Sunday", "That morning", "The next day", "At noon",
                 "For many years", "In those days", "Last week", "Long ago", "Later on"],
    "quote": ["Come inside, the {noun} is {adj}", "Have you seen {np}?", "We should go to {place} {time}",
              "I left {np} {prep} {np}", "It is {adj} today", "Where is {name}?",
              "Thank you for {np}", "Let us wait until {weather}", "Do not forget {np}"],
}


# everyday reporting that touches courts, contracts, clinics and studies in
# plain words, so the general domain is not disjoint from the specialized ones
NEWS = {
    **GENERAL,
    "official": ["the judge", "a lawyer for the family", "the city council", "the landlord", "the company",
                 "a doctor at the clinic", "the nurses", "the researchers", "the hospital", "the school board",
                 "a spokesman for the court", "the tenants", "the patients", "local officials"],
    "topic": ["the new lease", "the contract for the bridge", "the rent increase", "the court case",
              "the hospital budget", "the flu season", "the study of blood pressure", "a new treatment",
              "the trial of the new medicine", "the agreement with the union", "the insurance claim",
              "the appeal", "the settlement", "the vaccine programme", "the clinic's waiting list"],
    "said": ["said", "told reporters", "wrote in a letter", "argued", "announced", "explained"],
    "claim": ["the agreement would be signed {time}", "the case would be heard again in {season}",
              "patients with {ailment} should rest and drink water", "the results of the study were {adj}",
              "the court had made a mistake", "the rent would stay the same for {number} years",
              "the new treatment helped about {number} in ten patients", "the company had broken the contract",
              "the tenants must receive written notice", "the hospital needed more nurses",
              "the medicine lowered blood pressure in most patients", "the judge would decide {time}"],
    "ailment": ["a cold", "high blood pressure", "asthma", "diabetes", "back pain", "a fever", "the flu"],
    "number": ["two", "three", "four", "five", "six", "seven"],
    "sentence": [
        "{official_cap} {said} that {claim}.",
        "According to {official}, {claim}.",
        "{official_cap} {said} on Tuesday that {topic} was {adj}.",
        "In {place}, {official} {said} that {claim}.",
        "Many people in {place} were {feeling} about {topic}.",
        "{name} {said} that {claim}, but {official} disagreed.",
        "The decision on {topic} was expected {time}.",
        "{clause}, and {official} {said} that {claim}.",
    ],
}
NEWS["official_cap"] = [o[0].upper() + o[1:] for o in NEWS["official"]]




# ---------------------------------------------------------------------------
# legal domain

LEGAL = {
    "party": ["the Lessee", "the Lessor", "the Licensee", "the Licensor", "the Contractor", "the Owner",
              "the Borrower", "the Lender", "the Company", "the Employee", "the Purchaser", "the Seller",
              "the Tenant", "the Landlord", "the Trustee", "the Guarantor", "the plaintiff", "the defendant",
              "the appellant", "the respondent", "the petitioner", "the Agency", "the Secretary"],
    "court": ["the district court", "the Court of Appeals", "the trial court", "this Court", "the Supreme Court",
              "the bankruptcy court", "the court below", "the circuit court"],
    "surname": ["Smith", "Jones", "Harlan", "Whitaker", "Morrison", "Delgado", "Becker", "Ortiz", "Langford",
                "Pruitt", "Caldwell", "Hoffman", "Reyes", "Sullivan", "Baxter", "Kendrick", "Fairbanks"],
    "reporter": ["U.S.", "F.2d", "F.3d", "F. Supp.", "S. Ct.", "N.E.2d", "P.3d", "A.2d", "So. 2d"],
    "year": lambda r: str(r.randint(1948, 2019)),
    "num": lambda r: str(r.randint(1, 40)),
    "vol": lambda r: str(r.randint(101, 989)),
    "page": lambda r: str(r.randint(1, 1450)),
    "letter": ["a", "b", "c", "d", "e", "f"],
    "roman": ["i", "ii", "iii", "iv", "v"],
    "days": lambda r: (lambda n: f"{ {10: 'ten', 15: 'fifteen', 30: 'thirty', 45: 'forty-five', 60: 'sixty', 90: 'ninety'}[n]} ({n})")(r.choice([10, 15, 30, 45, 60, 90])),
    "instrument": ["this Agreement", "the Lease", "the Contract", "this License", "the Note", "the Indenture",
                   "the Plan", "the Deed of Trust", "the Settlement Agreement", "the Statute"],
    "obligation": ["pay all sums due", "deliver written notice", "maintain adequate insurance",
                   "indemnify and hold harmless {party}", "comply with all applicable laws",
                   "remit the outstanding balance", "cure such default", "furnish a certified statement",
                   "preserve the confidentiality of the Information", "surrender possession of the Premises",
                   "execute such further instruments as may be reasonably required"],
    "event": ["the Effective Date", "receipt of such notice", "the date of termination",
              "the occurrence of an Event of Default", "the Closing Date", "entry of judgment",
              "the expiration of the Term", "written demand therefor"],
    "holding": ["the statute did not confer a private right of action",
                "summary judgment was improper where material facts remained in dispute",
                "the contract was unenforceable for want of consideration",
                "the agency's interpretation was entitled to deference",
                "the defendant had waived the defense by failing to raise it",
                "the claim was barred by the applicable statute of limitations",
                "the search violated the Fourth Amendment",
                "the arbitration clause was valid and binding",
                "due process required notice and an opportunity to be heard",
                "the covenant did not run with the land"],
    "motion": ["dismiss", "compel arbitration", "suppress", "strike", "transfer venue", "amend the complaint",
               "stay proceedings", "for summary judgment"],
    "cite": ["{surname} v. {surname}, {vol} {reporter} {page} ({year})",
             "{surname} v. {surname}, {vol} {reporter} {page}, {page} ({year})",
             "In re {surname}, {vol} {reporter} {page} ({year})",
             "United States v. {surname}, {vol} {reporter} {page} ({year})"],
    "section": ["Section {num}", "Section {num}({letter})", "Section {num}({letter})({roman})",
                "subsection ({letter})", "paragraph {num}", "Article {num}"],
    "sentence": [
        "Notwithstanding any provision of {instrument} to the contrary, {party} shall {obligation} within {days} days after {event}.",
        "{party_cap} shall {obligation} in accordance with {section} of {instrument}.",
        "Except as otherwise provided in {section}, {party} shall not assign or transfer any right hereunder without the prior written consent of {party}.",
        "In {cite}, {court} held that {holding}.",
        "See {cite}; see also {cite}.",
        "{court_cap} concluded that {holding}, and we agree.",
        "The motion to {motion} is GRANTED in part and DENIED in part.",
        "The motion to {motion} is DENIED.",
        "Upon the occurrence of an Event of Default, {party} may, at its option, declare all amounts due and payable pursuant to {section}.",
        "{party_cap} hereby represents and warrants that it has full power and authority to enter into {instrument}.",
        "For purposes of {section}, the term \"{term}\" shall mean {definition}.",
        "Any notice required under {instrument} shall be in writing and shall be deemed given upon {event}.",
        "{party_cap} argues that {holding}; we disagree.",
        "We review the decision of {court} de novo. {cite}.",
        "The failure of {party} to enforce any provision of {instrument} shall not be construed as a waiver thereof.",
        "Accordingly, the judgment of {court} is AFFIRMED.",
        "Accordingly, the judgment is REVERSED and the case is REMANDED for further proceedings consistent with this opinion.",
        "{instrument_cap} shall be governed by and construed in accordance with the laws of the State of {state}.",
        "It is undisputed that {party} failed to {obligation} prior to {event}.",
        "Under {section}, a party seeking relief must show that {holding}.",
    ],
    "state": ["New York", "Delaware", "California", "Texas", "Illinois", "Ohio", "Georgia", "Oregon"],
    "term": ["Confidential Information", "Premises", "Affiliate", "Business Day", "Net Revenue",
             "Change of Control", "Indebtedness", "Material Adverse Effect", "Term"],
    "definition": ["any information disclosed by {party} that is marked as confidential",
                   "any day other than a Saturday, Sunday, or legal holiday",
                   "any entity that directly or indirectly controls {party}",
                   "all obligations for borrowed money, whether secured or unsecured",
                   "the real property described in Exhibit {letter_cap} attached hereto",
                   "gross receipts less returns, allowances, and applicable taxes"],
    "letter_cap": ["A", "B", "C", "D"],
}
LEGAL["party_cap"] = [p[0].upper() + p[1:] for p in LEGAL["party"]]
LEGAL["court_cap"] = [c[0].upper() + c[1:] for c in LEGAL["court"]]
LEGAL["instrument_cap"] = [c[0].upper() + c[1:] for c in LEGAL["instrument"]]


def legal_doc(rng: random.Random) -> str:
    n = rng.randint(3, 9)
    body = " ".join(sentence_case(expand("{sentence}", LEGAL, rng)) for _ in range(n))
    if rng.random() < 0.35:
        head = expand("{section}.", LEGAL, rng)
        body = head[0].upper() + head[1:] + " " + body
    return body


# ---------------------------------------------------------------------------
# biomedical domain

BIOMED = {
    "cond": ["type 2 diabetes", "hypertension", "chronic kidney disease", "sepsis", "asthma",
             "rheumatoid arthritis", "heart failure", "non-small cell lung cancer", "ischemic stroke",
             "major depressive disorder", "obesity", "atrial fibrillation", "hepatitis C", "COPD"],
    "drug": ["metformin", "lisinopril", "atorvastatin", "amoxicillin", "dexamethasone", "insulin glargine",
             "warfarin", "sertraline", "methotrexate", "pembrolizumab", "empagliflozin", "apixaban"],
    "gene": ["TP53", "EGFR", "BRCA1", "KRAS", "IL-6", "TNF-alpha", "VEGF", "APOE", "HER2", "PD-L1", "mTOR"],
    "cell": ["macrophages", "T cells", "hepatocytes", "cardiomyocytes", "endothelial cells", "neutrophils",
             "fibroblasts", "B cells", "epithelial cells", "neurons"],
    "outcome": ["all-cause mortality", "hospital readmission", "HbA1c levels", "systolic blood pressure",
                "progression-free survival", "serum creatinine", "quality of life scores", "LDL cholesterol",
                "length of stay", "the incidence of adverse events"],
    "design": ["a randomized controlled trial", "a retrospective cohort study", "a prospective cohort study",
               "a systematic review and meta-analysis", "a cross-sectional survey", "a case-control study",
               "a double-blind, placebo-controlled trial", "a single-center observational study"],
    "n": lambda r: str(r.choice([r.randint(24, 180), r.randint(200, 4800)])),
    "pct": lambda r: f"{r.uniform(1, 85):.1f}%",
    "p": lambda r: r.choice(["p < 0.001", "p < 0.01", f"p = 0.0{r.randint(1, 4)}", f"p = 0.{r.randint(1, 9)}{r.randint(0, 9)}"]),
    "ci": lambda r: (lambda a: f"95% CI {a:.2f}-{a + r.uniform(0.1, 0.9):.2f}")(r.uniform(0.3, 1.6)),
    "hr": lambda r: f"{r.uniform(0.4, 2.2):.2f}",
    "mg": lambda r: str(r.choice([5, 10, 20, 25, 40, 50, 100, 250, 500, 850, 1000])),
    "weeks": lambda r: str(r.choice([4, 8, 12, 24, 26, 48, 52])),
    "result": ["increased", "decreased", "did not significantly alter", "attenuated", "enhanced", "reduced"],
    "mech": ["phosphorylation of {gene}", "expression of {gene}", "activation of {cell}", "infiltration of {cell}",
             "oxidative stress", "mitochondrial dysfunction", "apoptosis of {cell}", "NF-kB signaling"],
    "sentence": [
        "We conducted {design} of {n} patients with {cond}.",
        "Patients received {drug} {mg} mg daily or placebo for {weeks} weeks.",
        "The primary endpoint was {outcome} at {weeks} weeks.",
        "Treatment with {drug} {result} {outcome} compared with placebo ({p}).",
        "The hazard ratio for {outcome} was {hr} ({ci}).",
        "Overall, {pct} of participants experienced at least one adverse event.",
        "In vitro, {drug} {result} {mech} in {cell}.",
        "Knockdown of {gene} {result} {mech}, suggesting a role in the pathogenesis of {cond}.",
        "These findings suggest that {mech} contributes to {cond}.",
        "Baseline characteristics were similar between groups, with a mean age of {age} years.",
        "Multivariate analysis identified {gene} expression as an independent predictor of {outcome} ({p}).",
        "Further studies are needed to confirm these results in larger populations.",
        "Serum {gene} concentrations were measured by ELISA at baseline and at {weeks} weeks.",
        "Compared with controls, patients with {cond} showed {result} {mech} ({p}).",
        "Data were analyzed using Cox proportional hazards models adjusted for age, sex, and comorbidities.",
        "The incidence of {cond} was {pct} in the intervention group and {pct} in the control group.",
    ],
    "age": lambda r: f"{r.uniform(38, 74):.1f}",
}


def biomed_doc(rng: random.Random) -> str:
    n = rng.randint(3, 9)
    body = " ".join(sentence_case(expand("{sentence}", BIOMED, rng)) for _ in range(n))
    if rng.random() < 0.3:
        body = rng.choice(["Background: ", "Methods: ", "Results: ", "Conclusions: "]) + body
    return body


def general_doc(rng: random.Random) -> str:
    u = rng.random()
    # like web text, the general domain carries a thin slice of specialized writing
    if u < 0.08:
        return legal_doc(rng)
    if u < 0.16:
        return biomed_doc(rng)
    n = rng.randint(3, 10)
    grammar = NEWS if u < 0.36 else GENERAL
    return " ".join(sentence_case(expand("{sentence}", grammar, rng)) for _ in range(n))


def build(gen, seed: int, target_bytes: int) -> str:
    rng = random.Random(seed)
    docs, size = [], 0
    while size < target_bytes:
        d = gen(rng)
        docs.append(d)
        size += len(d) + 2
    return "\n\n".join(docs) + "\n"


SPECS = {
    "general": (general_doc, 1_400_000),
    "legal": (legal_doc, 700_000),
    "biomedical": (biomed_doc, 700_000),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "src" / "mft" / "fixtures")
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    for i, (name, (gen, size)) in enumerate(SPECS.items()):
        text = build(gen, args.seed + i, size)
        (args.out / f"{name}.txt").write_text(text, encoding="utf-8")
        print(f"{name}: {len(text.encode())} bytes")


if __name__ == "__main__":
    main()
