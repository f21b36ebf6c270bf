"""Regenerate corpus/<service>/manifest.json and replay every witness.

Each hard target is written down by the text of its source line, so the
manifests survive edits that shift line numbers. A witness is a single REST
call that covers the target on its own; the script refuses to write a
manifest whose witness does not.

``requires_chain`` marks targets whose solution depends on code outside the
enclosing function: a constant or a called function that only value
expansion puts into the prompt.
"""

from __future__ import annotations

import argparse
import json
import sys

from hintfuzz.corpus import SERVICES, service_dir
from hintfuzz.harness import InProcessHarness, load_service
from hintfuzz.model import Expected, RestCallAction, Target, TargetKind, TestCase

B, MR = TargetKind.BRANCH, TargetKind.METHOD_REPLACEMENT
T, F = Expected.TRUE_SIDE, Expected.FALSE_SIDE
RT = Expected.RETURNS_TRUE


def get(path, query=None, path_params=None, headers=None):
    return {"verb": "GET", "path": path, "path_params": path_params or {}, "query_params": query or {}, "headers": headers or {}, "body": None}


def post(path, body, headers=None):
    return {"verb": "POST", "path": path, "path_params": {}, "query_params": {}, "headers": headers or {}, "body": body}


def delete(path, path_params):
    return {"verb": "DELETE", "path": path, "path_params": path_params, "query_params": {}, "headers": {}, "body": None}


# (unit, line snippet, kind, expected, position, witness, requires_chain, note)
HARD = {
    "hgvs": [
        ("genome.AnnotationResource", 'if (id.matches("rs[0-9]+"))', B, T, 0, get("/variant/{id}", {"assembly": "hg19", "depth": 30}, {"id": "rs121913529"}), False, "dbSNP id regex"),
        ("genome.AnnotationResource", 'if (id.matches("rs[0-9]+"))', MR, RT, 0, get("/variant/{id}", {"assembly": "hg19", "depth": 30}, {"id": "rs121913529"}), False, "dbSNP id regex"),
        ("genome.AnnotationResource", 'if (assembly == "GRCh38")', B, T, 0, get("/variant/{id}", {"assembly": "GRCh38", "depth": 30}, {"id": "v1"}), False, "assembly literal"),
    ],
    "hashguard": [
        ("auth.HashValidator", "let matches = matcher.matches()", MR, RT, 0, get("/keys", {"key": "0" * 32, "scope": "read"}), True, "pattern constant compiled at load"),
        ("auth.HashValidator", "if (matches)", B, T, 0, get("/keys", {"key": "0" * 32, "scope": "read"}), True, "pattern constant compiled at load"),
        ("auth.KeyResource", "if (isHashValid(key))", B, T, 0, get("/keys", {"key": "0" * 32, "scope": "read"}), True, "called validator"),
        ("auth.KeyResource", 'if (scope == "admin:full")', B, T, 0, get("/keys", {"key": "k", "scope": "admin:full"}), False, "scope literal"),
    ],
    "countries": [
        ("geo.CountryService", "if (code.matches(ALPHA3))", B, T, 0, get("/countries/{code}", {"lang": "en"}, {"code": "bra"}), True, "alpha-3 constant"),
        ("geo.CountryService", "if (code.matches(ALPHA3))", MR, RT, 0, get("/countries/{code}", {"lang": "en"}, {"code": "bra"}), True, "alpha-3 constant"),
        ("geo.CountryService", "if (code.matches(ALPHA2))", B, T, 0, get("/countries/{code}", {"lang": "en"}, {"code": "br"}), True, "alpha-2 constant"),
        ("geo.CountryService", "if (code.matches(ALPHA2))", MR, RT, 0, get("/countries/{code}", {"lang": "en"}, {"code": "br"}), True, "alpha-2 constant"),
        ("geo.CountryService", "if (code.matches(NUMERIC3))", B, T, 0, get("/countries/{code}", {"lang": "en"}, {"code": "076"}), True, "numeric constant"),
        ("geo.CountryService", "if (code.matches(NUMERIC3))", MR, RT, 0, get("/countries/{code}", {"lang": "en"}, {"code": "076"}), True, "numeric constant"),
        ("geo.CountryService", "if (normalized == null)", B, F, 0, get("/countries/{code}", {"lang": "en"}, {"code": "bra"}), True, "normalizer result"),
        ("geo.CountryService", 'if (lang == "pt-BR")', B, T, 0, get("/countries/{code}", {"lang": "pt-BR"}, {"code": "x"}), False, "language literal"),
    ],
    "dates": [
        ("time.DateParser", "if (!m.matches())", B, F, 0, get("/schedule", {"from": "2024-05-17", "limit": 5}), False, "ISO date regex"),
        ("time.DateParser", "if (!m.matches())", MR, RT, 0, get("/schedule", {"from": "2024-05-17", "limit": 5}), False, "ISO date regex"),
        ("time.DateParser", "if (month > 12)", B, T, 0, get("/schedule", {"from": "2024-13-01", "limit": 5}), False, "month past the regex"),
        ("time.DateParser", "if (month > 12)", B, F, 0, get("/schedule", {"from": "2024-05-17", "limit": 5}), False, "month past the regex"),
        ("time.DateParser", "if (day == 0)", B, T, 0, get("/schedule", {"from": "2024-05-00", "limit": 5}), False, "day past the regex"),
        ("time.ScheduleResource", 'if (zone.startsWith("Europe/"))', B, T, 0, post("/schedule/slots", {"zone": "Europe/Berlin"}), False, "zone prefix"),
        ("time.ScheduleResource", 'if (zone.startsWith("Europe/"))', MR, RT, 0, post("/schedule/slots", {"zone": "Europe/Berlin"}), False, "zone prefix"),
    ],
    "pay": [
        ("billing.PaymentService", 'if (!auth.startsWith("Bearer "))', B, F, 0, post("/payments", {"amount": 10, "reference": "x"}, {"authorization": "Bearer t"}), False, "bearer prefix"),
        ("billing.PaymentService", 'if (!auth.startsWith("Bearer "))', MR, RT, 0, post("/payments", {"amount": 10, "reference": "x"}, {"authorization": "Bearer t"}), False, "bearer prefix"),
        ("billing.PaymentService", "if (ref.matches(REFERENCE_PATTERN))", B, T, 0, post("/payments", {"amount": 10, "reference": "PAY-123456"}, {"authorization": "Bearer t"}), True, "reference pattern constant"),
        ("billing.PaymentService", "if (ref.matches(REFERENCE_PATTERN))", MR, RT, 0, post("/payments", {"amount": 10, "reference": "PAY-123456"}, {"authorization": "Bearer t"}), True, "reference pattern constant"),
        ("billing.PaymentService", "if (checkReference(reference))", B, T, 0, post("/payments", {"amount": 10, "reference": "PAY-123456"}, {"authorization": "Bearer t"}), True, "called checker"),
    ],
    "catwatch": [
        ("github.RepoValidator", "if (slash < 1)", B, F, 0, get("/stats", {"repo": "zalando/catwatch", "days": 30}), False, "owner/name separator"),
        ("github.RepoValidator", 'return name.matches("[a-z0-9-]+/[a-z0-9-]+")', MR, RT, 0, get("/stats", {"repo": "zalando/catwatch", "days": 30}), False, "repository regex"),
        ("github.StatsResource", "if (isValidRepoName(repo))", B, T, 0, get("/stats", {"repo": "zalando/catwatch", "days": 30}), False, "called validator"),
        ("github.StatsResource", 'if (sort == "commits")', B, T, 0, get("/contributors/{org}", {"sort": "commits"}, {"org": "zalando"}), False, "sort literal"),
    ],
    "languages": [
        ("i18n.LanguageService", "if (supported.contains(tag))", B, T, 0, get("/greeting", headers={"acceptlanguage": "de"}), False, "supported tag list"),
        ("i18n.LanguageService", "if (supported.contains(tag))", MR, RT, 0, get("/greeting", headers={"acceptlanguage": "de"}), False, "supported tag list"),
        ("i18n.LanguageService", 'if (tag.startsWith("zh"))', B, T, 0, get("/greeting", headers={"acceptlanguage": "zh-Hant"}), False, "supported and Chinese"),
        ("i18n.LanguageService", 'if (tag.startsWith("zh"))', MR, RT, 0, get("/greeting", headers={"acceptlanguage": "zh-Hant"}), False, "supported and Chinese"),
    ],
    "hospital": [
        ("health.CpfValidator", "if (!m.matches())", B, F, 0, post("/admissions", {"cpf": "000.000.000-00", "age": 30}), False, "CPF layout regex"),
        ("health.CpfValidator", "if (!m.matches())", MR, RT, 0, post("/admissions", {"cpf": "000.000.000-00", "age": 30}), False, "CPF layout regex"),
        ("health.CpfValidator", "if (digits % 97 == check)", B, T, 0, post("/admissions", {"cpf": "000.000.000-00", "age": 30}), False, "checksum past the regex"),
        ("health.CpfValidator", "if (digits % 97 == check)", B, F, 0, post("/admissions", {"cpf": "111.111.111-11", "age": 30}), False, "checksum past the regex"),
        ("health.AdmissionResource", "if (isValidCpf(request.body.cpf))", B, T, 0, post("/admissions", {"cpf": "000.000.000-00", "age": 30}), False, "called validator"),
    ],
    "regions": [
        ("genome.RegionParser", "if (!m.matches())", B, F, 0, get("/regions/length", {"region": "chr7:100-200", "build": "grch37"}), True, "region pattern constant"),
        ("genome.RegionParser", "if (!m.matches())", MR, RT, 0, get("/regions/length", {"region": "chr7:100-200", "build": "grch37"}), True, "region pattern constant"),
        ("genome.RegionParser", "if (start > end)", B, T, 0, get("/regions/length", {"region": "chr7:200-100", "build": "grch37"}), True, "ordering past the pattern"),
        ("genome.RegionParser", "if (start > end)", B, F, 0, get("/regions/length", {"region": "chr7:100-200", "build": "grch37"}), True, "ordering past the pattern"),
        ("genome.RegionParser", 'if (build.endsWith("38") && build.startsWith("hg"))', B, T, 0, get("/regions/length", {"region": "x", "build": "hg38"}), False, "build name"),
        ("genome.RegionParser", 'if (build.endsWith("38") && build.startsWith("hg"))', MR, RT, 0, get("/regions/length", {"region": "x", "build": "hg38"}), False, "build suffix"),
    ],
    "orders": [
        ("shop.Coupons", "if (code.matches(COUPON_RE))", B, T, 0, post("/orders", {"order": {"channel": "web", "coupon": "SAVE15-SPR", "qty": 2}}), True, "coupon pattern constant"),
        ("shop.Coupons", "if (code.matches(COUPON_RE))", MR, RT, 0, post("/orders", {"order": {"channel": "web", "coupon": "SAVE15-SPR", "qty": 2}}), True, "coupon pattern constant"),
        ("shop.Coupons", "if (pct > 50)", B, T, 0, post("/orders", {"order": {"channel": "web", "coupon": "SAVE75-SPR", "qty": 2}}), True, "percentage past the pattern"),
        ("shop.OrderService", 'if (channel == "mobile-app")', B, T, 0, post("/orders", {"order": {"channel": "mobile-app", "coupon": "x", "qty": 2}}), False, "channel literal"),
    ],
}


def locate(si, unit: str, snippet: str) -> int:
    source_unit = si.program.units[unit]
    lines = [n for n, text in enumerate(source_unit.source.splitlines(), 1) if snippet in text]
    if len(lines) != 1:
        raise SystemExit(f"{si.name}: snippet {snippet!r} matches lines {lines} in {unit}")
    return lines[0]


def build(name: str) -> dict:
    root = service_dir(name)
    si = load_service(root)
    harness = InProcessHarness(si)
    known = set(si.targets)
    hard = []
    for unit, snippet, kind, expected, pos, witness, chain, note in HARD[name]:
        t = Target(kind, unit, locate(si, unit, snippet), pos, expected)
        if t not in known:
            raise SystemExit(f"{name}: {t.id} is not an instrumented target")
        result = harness.execute(TestCase((RestCallAction.from_dict(witness),)))
        if t not in result.coverage.covered_targets:
            raise SystemExit(f"{name}: witness {witness} does not cover {t.id}")
        hard.append({"target": t.id, "witness": witness, "requires_chain": chain, "note": note})
    return {"service": si.name, "hard_targets": hard}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("services", nargs="*", default=list(SERVICES))
    p.add_argument("--check", action="store_true", help="verify only; fail if a manifest on disk differs")
    args = p.parse_args(argv)
    stale = []
    for name in args.services:
        manifest = build(name)
        text = json.dumps(manifest, indent=2) + "\n"
        path = service_dir(name) / "manifest.json"
        if args.check:
            if not path.exists() or path.read_text() != text:
                stale.append(name)
        else:
            path.write_text(text)
        print(f"{name}: {len(manifest['hard_targets'])} hard targets verified")
    if stale:
        print("stale manifests: " + ", ".join(stale), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
