"""Exit criteria for the build, run against one AS and one RS on loopback ports.

Each test prints a single ``C<n> <title>: PASS|FAIL`` line (also repeated in the
pytest terminal summary).  Set ``UMA_ODRL_WRITE_GOLDENS=1`` to rewrite the
wire-format fixtures after a deliberate format change.
"""

import base64
import json
import os
import random
import re
import threading
import time
from contextlib import contextmanager
from datetime import datetime, timedelta, timezone
from pathlib import Path
from urllib.parse import quote

import httpx
import pytest
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from uma_odrl import engine, tokens
from uma_odrl.authorization_server import UMA_GRANT_TYPE
from uma_odrl.cli import main
from uma_odrl.claims import IDTOKEN_FORMAT, VerifiedClaims, mint_test_token
from uma_odrl.client import Outcome, parse_www_authenticate, run_flow
from uma_odrl.odrl import Constraint, Policy, Rule, policy_to_json
from uma_odrl.permissions import RequestedPermission, permissions_to_wire
from uma_odrl.resource_server import ASClient, Authorizer, ResourceManager, ResourceServer
from uma_odrl.resource_server.mapping import compute_required_permissions

import harness
import oracles
from harness import ALICE, AS_KEY, BOB, IDP, IDP_KEY, SECRET, Clock, direct_as_transport, loopback, seed_resources

pytestmark = pytest.mark.acceptance

FIXTURES = Path(__file__).parent / "fixtures"
WRITE_GOLDENS = os.environ.get("UMA_ODRL_WRITE_GOLDENS") == "1"
FIXED_NOW = datetime(2026, 10, 16, 12, 0, 0, tzinfo=timezone.utc)
FAR_EXP = 4102444800  # 2100-01-01T00:00:00Z
CAROL = "https://carol.test/card#me"
RESEARCH = "https://w3id.org/dpv#ResearchAndDevelopment"
MARKETING = "https://w3id.org/dpv#Marketing"
TICKET_RE = re.compile(r"^[A-Za-z0-9_-]{43}$")


@contextmanager
def criterion(n: int, title: str):
    """Record a PASS/FAIL line for criterion ``n``; the body stores a summary in state['detail']."""
    state = {"detail": ""}
    try:
        yield state
    except BaseException as exc:
        line = f"C{n} {title}: FAIL ({state['detail'] or type(exc).__name__}: {str(exc)[:200]})"
        harness.ACCEPTANCE.append(line)
        print(line)
        raise
    line = f"C{n} {title}: PASS ({state['detail']})"
    harness.ACCEPTANCE.append(line)
    print(line)


# ---------------------------------------------------------------------------
# deployment
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def dep(tmp_path_factory):
    d = loopback(tmp_path_factory.mktemp("rs"), clock=Clock(FIXED_NOW))
    yield d
    d.close()


@pytest.fixture
def fresh(dep, tmp_path):
    """Reset the shared deployment: empty policy store, fresh resources, frozen clock."""
    reset(dep, tmp_path / "root", [])
    return dep


_roots = iter(range(10**9))


def reset(dep, base: Path, policies):
    for p in dep.store.list():
        dep.store.delete(p.uid)
    for p in policies:
        dep.store.put(p)
    root = base / f"r{next(_roots)}"
    rm = ResourceManager(root)
    seed_resources(rm)
    dep.rs.resources = rm
    dep.clock.frozen = FIXED_NOW


def claim_token(webid=ALICE, **claims):
    return mint_test_token(webid, IDP, IDP_KEY, claims or None, FAR_EXP)


def direct_token_request(dep, perms, token):
    form = {"grant_type": UMA_GRANT_TYPE, "permissions": json.dumps(permissions_to_wire(perms)),
            "claim_token": token.raw, "claim_token_format": token.format}
    return dep.http.post(dep.as_uri + "/token", data=form)


def policy(uid, *rules):
    return Policy(uid, tuple(rules))


def read_rule(dep, uid, path, kind="permission", assignee=ALICE, action="read", constraints=()):
    return Rule(uid, kind, dep.iri(path), action, assignee=assignee, constraints=constraints)


# ---------------------------------------------------------------------------
# random generators (seeded, independent of hypothesis)
# ---------------------------------------------------------------------------

PATHS = ["/", "/docs/", "/docs/a", "/docs/b", "/c/", "/c/x"]
RIGHTS = ["read", "modify", "create", "delete"]
WEBIDS = [ALICE, BOB, CAROL]
PURPOSES = [RESEARCH, MARKETING]


def random_constraint(rng, now):
    if rng.random() < 0.6:
        op = rng.choice(["eq", "neq", "lt", "lteq", "gt", "gteq", "isAnyOf"])
        pick = lambda: now + timedelta(seconds=rng.randint(-2, 2))  # noqa: E731
        if op == "isAnyOf":
            return Constraint("dateTime", op, tuple(pick() for _ in range(rng.randint(1, 3))))
        return Constraint("dateTime", op, pick())
    op = rng.choice(["eq", "neq", "isAnyOf"])
    if op == "isAnyOf":
        return Constraint("purpose", op, tuple(rng.sample(PURPOSES, rng.randint(1, 2))))
    return Constraint("purpose", op, rng.choice(PURPOSES))


def random_store(rng, base, now, max_rules=6, permit_bias=0.7, focus=()):
    """Up to ``max_rules`` rules; with ``focus`` (path, right) pairs most rules aim at those."""
    rules = []
    for i in range(rng.randint(0, max_rules)):
        if focus and rng.random() < 0.7:
            path, right = rng.choice(focus)
        else:
            path, right = rng.choice(PATHS), rng.choice(RIGHTS)
        rules.append(Rule(
            f"urn:rule:{i}",
            "permission" if rng.random() < permit_bias else "prohibition",
            rng.choice([base, base.upper().replace("HTTP://", "http://")]) + path,
            right,
            assignee=rng.choice([None, ALICE, ALICE, BOB]),
            constraints=tuple(random_constraint(rng, now) for _ in range(rng.choice([0, 0, 1, 2]))),
        ))
    groups = rng.randint(1, 3)
    return [Policy(f"urn:policy:{g}", tuple(rules[g::groups])) for g in range(groups) if rules[g::groups]]


def random_request(rng, base):
    n = rng.randint(1, 3)
    return [RequestedPermission(base + rng.choice(PATHS), rng.sample(RIGHTS, rng.randint(1, 4))) for _ in range(n)]


# ---------------------------------------------------------------------------
# C1 end-to-end flow, golden transcript
# ---------------------------------------------------------------------------


def normalise(text: str, dep, ticket=None) -> str:
    text = text.replace(dep.as_uri, "{AS}").replace(dep.rs_uri, "{RS}")
    if ticket:
        text = text.replace(ticket, "{TICKET}")
    return text


def golden(name: str, produced: str) -> str:
    path = FIXTURES / name
    if WRITE_GOLDENS:
        FIXTURES.mkdir(exist_ok=True)
        path.write_text(produced, encoding="utf-8")
    return path.read_text(encoding="utf-8")


def test_c1_end_to_end_grant_flow(fresh, capsys):
    dep = fresh
    with criterion(1, "end-to-end grant flow") as st:
        dep.store.put(policy("urn:policy:c1", read_rule(dep, "urn:rule:c1", "/docs/a")))
        code = main(["request", "GET", dep.iri("/docs/a"), "--claim-token", claim_token().raw, "--json"])
        transcript = json.loads(capsys.readouterr().out)
        statuses = [s["response"]["status"] for s in transcript["steps"]]
        labels = [s["label"] for s in transcript["steps"]]
        st["detail"] = f"exit {code}, steps {list(zip(labels, statuses))}"
        assert code == 0
        assert labels == ["rs-attempt", "as-token", "rs-retry"]
        assert statuses == [401, 200, 200]
        assert TICKET_RE.match(transcript["ticket"])
        produced = normalise(json.dumps(transcript, indent=2, sort_keys=True), dep, transcript["ticket"]) + "\n"
        assert produced == golden("flow_transcript.json", produced)
        st["detail"] += ", transcript matches golden"


# ---------------------------------------------------------------------------
# C2 default deny
# ---------------------------------------------------------------------------


def test_c2_default_deny(fresh):
    dep = fresh
    with criterion(2, "default-deny on empty store") as st:
        rng = random.Random(2)
        grants = statuses = 0
        outcomes = set()
        for i in range(100):
            webid = rng.choice(WEBIDS + [f"https://agent{i}.test/card#me"])
            token = claim_token(webid, **({"purpose": rng.choice(PURPOSES)} if rng.random() < 0.5 else {}))
            if i % 2:
                resp = direct_token_request(dep, random_request(rng, dep.rs_uri), token)
            else:
                method = rng.choice(["GET", "HEAD", "PUT", "PATCH", "DELETE", "POST"])
                path = "/docs/" if method == "POST" else rng.choice(PATHS[1:])
                challenge = dep.http.request(method, dep.iri(path))
                ticket = parse_www_authenticate(challenge.headers["www-authenticate"])["ticket"]
                resp = dep.http.post(dep.as_uri + "/token", data={
                    "grant_type": UMA_GRANT_TYPE, "ticket": ticket,
                    "claim_token": token.raw, "claim_token_format": IDTOKEN_FORMAT})
            outcomes.add((resp.status_code, resp.json().get("error")))
            grants += resp.status_code == 200
            statuses += 1
        st["detail"] = f"{statuses} requests, {grants} grants, answers {sorted(outcomes)}"
        assert grants == 0
        assert outcomes == {(403, "request_denied")}


# ---------------------------------------------------------------------------
# C3 prohibition overrides permission
# ---------------------------------------------------------------------------


def test_c3_prohibition_overrides_permission(fresh):
    dep = fresh
    with criterion(3, "prohibition-overrides-permission") as st:
        dep.store.put(policy("urn:policy:allow", read_rule(dep, "urn:rule:allow", "/docs/a")))
        dep.store.put(policy("urn:policy:forbid", read_rule(dep, "urn:rule:forbid", "/docs/a", kind="prohibition")))
        with httpx.Client(timeout=10) as http:
            both = run_flow("GET", dep.iri("/docs/a"), claim_token=claim_token(), http=http)
            dep.store.delete("urn:policy:forbid")
            permit_only = run_flow("GET", dep.iri("/docs/a"), claim_token=claim_token(), http=http)
        st["detail"] = f"with prohibition {both.outcome.value}, without {permit_only.outcome.value}"
        assert both.outcome is Outcome.DENIED
        assert both.steps[-1].response["json"]["error"] == "request_denied"
        assert permit_only.outcome is Outcome.GRANTED
        assert permit_only.rpt_permissions == [{"resource_id": dep.iri("/docs/a"), "resource_scopes": ["read"]}]


# ---------------------------------------------------------------------------
# C4 oracle equivalence
# ---------------------------------------------------------------------------


def test_c4_oracle_equivalence():
    with criterion(4, "oracle equivalence") as st:
        rng = random.Random(4)
        base = "http://rs.test"
        cases = mismatches = granted_total = 0
        for _ in range(1500):
            now = FIXED_NOW + timedelta(seconds=rng.randint(-2, 2), microseconds=rng.choice([0, 0, 1, 999_999]))
            requested = random_request(rng, base)
            focus = [(p.resource[len(base):], r) for p in requested for r in sorted(p.access_rights)]
            policies = random_store(rng, base, FIXED_NOW, focus=focus)
            webid = rng.choice(WEBIDS)
            context = {"purpose": rng.choice(PURPOSES)} if rng.random() < 0.6 else {}
            decision = engine.grant(policies, VerifiedClaims(webid, IDP, context), requested,
                                    engine.StateOfTheWorld(now))
            o_granted, o_denied = oracles.brute_force_decision(
                [policy_to_json(p) for p in policies], webid, context,
                [(p.resource, sorted(p.access_rights)) for p in requested], now)
            same = decision.granted == o_granted and \
                {(r, a): why.value for r, a, why in decision.denied} == o_denied
            mismatches += not same
            granted_total += len(o_granted)
            cases += 1
        st["detail"] = f"{cases} cases, {mismatches} mismatches, {granted_total} granted pairs"
        assert cases >= 1000
        assert mismatches == 0


# ---------------------------------------------------------------------------
# C5 temporal constraints
# ---------------------------------------------------------------------------


def test_c5_temporal_bounds(fresh):
    dep = fresh
    with criterion(5, "temporal constraints") as st:
        bound = FIXED_NOW + timedelta(days=30)
        results = {}
        for op, expected in (("lt", [True, False, False]), ("gt", [False, False, True])):
            rule = read_rule(dep, f"urn:rule:{op}", "/docs/a", constraints=(Constraint("dateTime", op, bound),))
            for p in dep.store.list():
                dep.store.delete(p.uid)
            dep.store.put(policy(f"urn:policy:{op}", rule))
            seen = []
            for offset in (-1, 0, 1):
                dep.clock.frozen = bound + timedelta(seconds=offset)
                resp = direct_token_request(dep, [RequestedPermission(dep.iri("/docs/a"), {"read"})], claim_token())
                seen.append(resp.status_code == 200)
            results[op] = seen
            assert seen == expected, (op, seen)
        st["detail"] = "granted at bound-1s/bound/bound+1s: " + ", ".join(f"{k} {v}" for k, v in results.items())


# ---------------------------------------------------------------------------
# C6 hierarchy blindness
# ---------------------------------------------------------------------------


def test_c6_hierarchy_blindness(fresh):
    dep = fresh
    with criterion(6, "hierarchy-blindness") as st:
        dep.store.put(policy("urn:policy:c", read_rule(dep, "urn:rule:c", "/c/")))
        with httpx.Client(timeout=10) as http:
            member = run_flow("GET", dep.iri("/c/x"), claim_token=claim_token(), http=http)
            container = run_flow("GET", dep.iri("/c/"), claim_token=claim_token(), http=http)
        reports = dep.auth.explain(VerifiedClaims(ALICE, IDP), [RequestedPermission(dep.iri("/c/x"), {"read"})])
        st["detail"] = f"/c/x {member.outcome.value}, /c/ {container.outcome.value}"
        assert member.outcome is Outcome.DENIED
        assert container.outcome is Outcome.GRANTED
        assert reports[0].rule_reports == ()


# ---------------------------------------------------------------------------
# C7 direct-mode equivalence
# ---------------------------------------------------------------------------


def test_c7_direct_mode_equivalence(dep, tmp_path):
    with criterion(7, "direct-mode equivalence") as st:
        rng = random.Random(7)
        diffs = granted = 0
        with httpx.Client(timeout=10) as http:
            for i in range(100):
                webid = rng.choice([ALICE, ALICE, BOB])
                claims = {"purpose": rng.choice(PURPOSES)} if rng.random() < 0.5 else {}
                method = rng.choice(["GET", "HEAD", "PATCH", "DELETE"])
                path = rng.choice(["/docs/a", "/docs/b", "/c/x", "/docs/", "/c/"] if method != "PATCH"
                                  else ["/docs/a", "/docs/b", "/c/x"])
                focus = sorted(oracles.required_pairs(method, path, True))
                policies = random_store(rng, dep.rs_uri, FIXED_NOW, permit_bias=0.85, focus=focus)
                body = b"patched" if method == "PATCH" else b""
                runs = []
                for direct in (False, True):
                    reset(dep, tmp_path, policies)
                    runs.append(run_flow(method, dep.iri(path), claim_token=claim_token(webid, **claims),
                                         direct=direct, as_uri=dep.as_uri, body=body, http=http))
                ticket_mode, direct_mode = runs
                perms = lambda t: sorted(json.dumps(p, sort_keys=True) for p in (t.rpt_permissions or []))  # noqa
                same = perms(ticket_mode) == perms(direct_mode) and ticket_mode.outcome == direct_mode.outcome
                diffs += not same
                granted += ticket_mode.outcome is Outcome.GRANTED
        st["detail"] = f"100 setups, {granted} granted, {diffs} differences"
        assert diffs == 0


# ---------------------------------------------------------------------------
# C8 ticket lifecycle
# ---------------------------------------------------------------------------


def _challenge_ticket(dep, method, path, body=b""):
    resp = dep.http.request(method, dep.iri(path), content=body or None)
    assert resp.status_code == 401
    return parse_www_authenticate(resp.headers["www-authenticate"])["ticket"]


def test_c8_ticket_lifecycle(fresh):
    dep = fresh
    with criterion(8, "ticket lifecycle") as st:
        dep.store.put(policy("urn:policy:t", read_rule(dep, "urn:rule:t", "/docs/a")))
        token = claim_token()

        # (a) 64 concurrent redemptions of one ticket over HTTP
        ticket = _challenge_ticket(dep, "GET", "/docs/a")
        barrier = threading.Barrier(64)
        codes = []
        lock = threading.Lock()

        def redeem():
            with httpx.Client(timeout=20) as http:
                barrier.wait()
                r = http.post(dep.as_uri + "/token", data={"grant_type": UMA_GRANT_TYPE, "ticket": ticket,
                                                           "claim_token": token.raw,
                                                           "claim_token_format": IDTOKEN_FORMAT})
            with lock:
                codes.append((r.status_code, r.json().get("error")))

        threads = [threading.Thread(target=redeem) for _ in range(64)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        wins = sum(c == 200 for c, _ in codes)
        assert wins == 1 and codes.count((400, "invalid_grant")) == 63, codes

        # (b) strict expiry at the ttl boundary
        at_bound, past_bound = _challenge_ticket(dep, "GET", "/docs/a"), _challenge_ticket(dep, "GET", "/docs/a")

        def redeem_at(t, seconds):
            dep.clock.frozen = FIXED_NOW + timedelta(seconds=seconds)
            return dep.http.post(dep.as_uri + "/token", data={"grant_type": UMA_GRANT_TYPE, "ticket": t,
                                                              "claim_token": token.raw,
                                                              "claim_token_format": IDTOKEN_FORMAT})

        boundary = (redeem_at(at_bound, 300).status_code, redeem_at(past_bound, 301).json().get("error"))
        dep.clock.frozen = FIXED_NOW
        assert boundary == (200, "invalid_grant"), boundary

        # (c) 401 and need_info tickets bind exactly the required permissions
        rng = random.Random(8)
        checked = mismatched = 0
        for _ in range(150):
            method = rng.choice(["GET", "HEAD", "PUT", "PATCH", "DELETE", "POST"])
            path = rng.choice(["/docs/", "/c/"] if method == "POST" else ["/docs/a", "/docs/new", "/c/x", "/c/",
                                                                        "/docs/", "/c/sub/"])
            existed = dep.rs.resources.exists(path)
            ticket = _challenge_ticket(dep, method, path, b"x")
            bound_perms = list(dep.auth.tickets.peek(ticket).requested)
            child = ""
            if method == "POST":
                child = bound_perms[1].resource[len(dep.iri(path)):]
            expected = {(dep.iri(p), r) for p, r in oracles.required_pairs(method, path, existed, child)}
            as_pairs = lambda perms: {(p.resource, r) for p in perms for r in p.access_rights}  # noqa: E731
            ok = as_pairs(bound_perms) == expected
            ok = ok and bound_perms == compute_required_permissions(method, path, exists=existed,
                                                                    base_url=dep.rs_uri, child=child or None)
            need_info = dep.http.post(dep.as_uri + "/token", data={"grant_type": UMA_GRANT_TYPE, "ticket": ticket})
            body = need_info.json()
            ok = ok and need_info.status_code == 403 and body["error"] == "need_info"
            ok = ok and list(dep.auth.tickets.peek(body["ticket"]).requested) == bound_perms
            checked += 1
            mismatched += not ok
        st["detail"] = (f"concurrent redemptions {wins}/64 succeeded, boundary 300s/301s -> {boundary}, "
                        f"{checked} challenge+need_info tickets, {mismatched} mismatches")
        assert mismatched == 0


# ---------------------------------------------------------------------------
# C9 token-scope soundness fuzz
# ---------------------------------------------------------------------------

FUZZ_PATHS = ["/", "/docs/", "/docs/a", "/docs/b", "/docs/new", "/c/", "/c/x", "/c/sub/", "/c/sub/y", "/nope/z"]
FUZZ_METHODS = ["GET", "HEAD", "PUT", "PATCH", "POST", "DELETE", "GET", "PUT"]
FORGER = tokens.private_key_from_seed_hex("dd" * 32)


def _b64d(seg: str) -> bytes:
    return base64.urlsafe_b64decode(seg + "=" * (-len(seg) % 4))


def independently_valid_pairs(token, as_pub: Ed25519PublicKey, issuer: str, now: datetime):
    """Pairs a token validly grants, checked without the package's token code; None if invalid."""
    if not token:
        return None
    parts = token.split(".")
    if len(parts) != 3 or parts[0] != "eyJhbGciOiJFZERTQSJ9":
        return None
    try:
        sig = _b64d(parts[2])
        if base64.urlsafe_b64encode(sig).rstrip(b"=").decode() != parts[2]:
            return None
        as_pub.verify(sig, f"{parts[0]}.{parts[1]}".encode())
        payload = json.loads(_b64d(parts[1]))
    except (InvalidSignature, ValueError, UnicodeError):
        return None
    if payload.get("iss") != issuer or not isinstance(payload.get("exp"), int):
        return None
    if not payload["exp"] > now.timestamp() or not payload.get("sub"):
        return None
    try:
        return {(p["resource_id"], s) for p in payload["permissions"] for s in p["resource_scopes"]}
    except (KeyError, TypeError):
        return None


def fuzz_token(rng, base, method, path, now):
    """A token of a random kind, aimed at (method, path)."""
    exists_guess = rng.random() < 0.5
    child = rng.choice(["n1", "n2", "n3"])
    pairs = oracles.required_pairs(method, path, exists_guess, child) if method in (
        "GET", "HEAD", "PUT", "PATCH", "POST", "DELETE") else set()
    if rng.random() < 0.3:  # include the other PUT variant too
        pairs |= oracles.required_pairs(method, path, not exists_guess, child) if pairs else set()
    by_res = {}
    for p, r in pairs:
        by_res.setdefault(base + p, set()).add(r)
    perms = [{"resource_id": r, "resource_scopes": sorted(s)} for r, s in sorted(by_res.items())]
    payload = {"iss": "http://as.test", "sub": ALICE, "permissions": perms,
               "iat": int(now.timestamp()), "exp": int(now.timestamp()) + 600}
    kind = rng.choice(["none", "valid", "valid", "valid", "under", "expired", "forged", "issuer", "mutated",
                       "header", "nosub", "badperms", "random-scope", "garbage"])
    if kind == "none":
        return kind, None
    if kind == "under" and perms:
        victim = rng.choice(perms)
        victim["resource_scopes"] = victim["resource_scopes"][1:]
        payload["permissions"] = [p for p in perms if p["resource_scopes"]]
    elif kind == "expired":
        payload["exp"] = int(now.timestamp()) - rng.choice([0, 1, 3600])
    elif kind == "issuer":
        payload["iss"] = "http://evil.test"
    elif kind == "nosub":
        del payload["sub"]
    elif kind == "badperms":
        payload["permissions"] = rng.choice([{"resource_id": base + path}, "all", [{"resource_id": 1}]])
    elif kind == "random-scope":
        payload["permissions"] = [{"resource_id": base + rng.choice(FUZZ_PATHS),
                                   "resource_scopes": rng.sample(RIGHTS, rng.randint(1, 4))}
                                  for _ in range(rng.randint(1, 3))]
    elif kind == "garbage":
        return kind, rng.choice(["", "x", "a.b.c", "eyJhbGciOiJFZERTQSJ9..", "Bearer"])
    key = FORGER if kind == "forged" else AS_KEY
    token = tokens.encode_token(payload, key)
    if kind == "mutated":
        i = rng.randrange(len(token))
        token = token[:i] + rng.choice("ABCDEFabcdef0123456789-_.") + token[i + 1:]
    elif kind == "header":
        head = tokens.b64url_encode(rng.choice([b'{"alg":"none"}', b'{"alg":"EdDSA","typ":"JWT"}',
                                                b'{"alg": "EdDSA"}']))
        signing = head + "." + token.split(".")[1]
        token = signing + "." + tokens.b64url_encode(AS_KEY.sign(signing.encode()))
    return kind, token


def run_fuzz(n, rng, send, resources, base, now, as_pub, issuer):
    stats = {"requests": 0, "2xx": 0, "violations": 0, "valid-covering": 0}
    for _ in range(n):
        method = rng.choice(FUZZ_METHODS + ["OPTIONS"])
        path = rng.choice(FUZZ_PATHS)
        kind, token = fuzz_token(rng, base, method, path, now)
        headers = {"Authorization": f"Bearer {token}"} if token is not None else {}
        try:
            existed = resources.exists(path)
        except ValueError:
            existed = False
        status, location = send(method, path, headers, b"fuzz")
        stats["requests"] += 1
        if not 200 <= status < 300:
            continue
        stats["2xx"] += 1
        child = location[len(base + path):] if method == "POST" and location else ""
        needed = {(base + p, r) for p, r in oracles.required_pairs(method, path, existed, child)}
        granted = independently_valid_pairs(token, as_pub, issuer, now)
        if granted is None or not needed <= granted:
            stats["violations"] += 1
        else:
            stats["valid-covering"] += 1
    return stats


def test_c9_token_scope_soundness(dep, tmp_path):
    with criterion(9, "token-scope soundness fuzz") as st:
        started = time.monotonic()
        rng = random.Random(9)
        auth = harness._authorization_server("http://as.test", [], Clock(FIXED_NOW))
        rm = ResourceManager(tmp_path / "fuzz")
        seed_resources(rm)
        rs = ResourceServer(rm, Authorizer(ASClient("http://as.test", SECRET, http=direct_as_transport(auth))),
                            "http://rs.test", clock=lambda: FIXED_NOW)

        def send_direct(method, path, headers, body):
            resp = rs.handle(method, path, headers, body)
            return resp.status, resp.headers.get("Location")

        core = run_fuzz(10_000, rng, send_direct, rm, "http://rs.test", FIXED_NOW, AS_KEY.public_key(),
                        "http://as.test")

        # A slice of the same fuzz over real HTTP against the loopback RS.
        reset(dep, tmp_path, [])
        wire = run_fuzz_loopback(dep, rng, 2000)
        elapsed = time.monotonic() - started
        st["detail"] = (f"handler: {core['requests']} requests, {core['2xx']} 2xx, {core['valid-covering']} covered, "
                        f"{core['violations']} violations; loopback HTTP: {wire['requests']} requests, "
                        f"{wire['2xx']} 2xx, {wire['violations']} violations; {elapsed:.1f}s")
        assert core["requests"] == 10_000
        assert core["violations"] == 0 and wire["violations"] == 0
        assert core["2xx"] > 0 and wire["2xx"] > 0


def run_fuzz_loopback(dep, rng, n):
    """Same generator, but tokens carry the loopback issuer and resource origin."""
    stats = {"requests": 0, "2xx": 0, "violations": 0, "valid-covering": 0}
    for _ in range(n):
        method = rng.choice(FUZZ_METHODS + ["OPTIONS"])
        path = rng.choice(FUZZ_PATHS)
        kind, token = fuzz_token(rng, dep.rs_uri, method, path, FIXED_NOW)
        if token and kind not in ("issuer", "garbage", "forged", "mutated", "header"):
            _, payload = tokens.decode_unverified(token)
            payload["iss"] = dep.as_uri
            token = tokens.encode_token(payload, AS_KEY)
        headers = {"Authorization": f"Bearer {token}".strip()} if token is not None else {}
        existed = dep.rs.resources.exists(path)
        resp = dep.http.request(method, dep.iri(path), headers=headers, content=b"fuzz")
        stats["requests"] += 1
        if not 200 <= resp.status_code < 300:
            continue
        stats["2xx"] += 1
        location = resp.headers.get("location") or ""
        child = location[len(dep.iri(path)):] if method == "POST" else ""
        needed = {(dep.iri(p), r) for p, r in oracles.required_pairs(method, path, existed, child)}
        granted = independently_valid_pairs(token, AS_KEY.public_key(), dep.as_uri, FIXED_NOW)
        if granted is None or not needed <= granted:
            stats["violations"] += 1
        else:
            stats["valid-covering"] += 1
    return stats


# ---------------------------------------------------------------------------
# C10 wire-format goldens
# ---------------------------------------------------------------------------


def test_c10_wire_format_goldens(fresh):
    dep = fresh
    with criterion(10, "wire-format goldens") as st:
        dep.store.put(policy("urn:policy:w", read_rule(dep, "urn:rule:w", "/docs/a")))
        exchanges = []

        def keep(resp):
            resp.read()
            exchanges.append((resp.request, resp))

        token = claim_token(ALICE, purpose=RESEARCH)
        with httpx.Client(timeout=10, event_hooks={"response": [keep]}) as http:
            transcript = run_flow("GET", dep.iri("/docs/a"), claim_token=token, http=http)
            discovery = http.get(dep.as_uri + "/.well-known/uma2-configuration")
            jwks = http.get(dep.as_uri + "/keys").json()
        assert transcript.outcome is Outcome.GRANTED
        ticket = transcript.ticket
        token_exchange = next((q, r) for q, r in exchanges if q.url.path == "/token")
        rpt = token_exchange[1].json()["access_token"]
        checked = []

        def match(name, produced):
            assert produced == golden(name, produced), name
            checked.append(name)

        match("discovery.json", normalise(discovery.content.decode(), dep) + "\n")
        challenge = next(r for q, r in exchanges if r.status_code == 401).headers["www-authenticate"]
        match("www_authenticate.txt", normalise(challenge, dep, ticket) + "\n")

        request_body = token_exchange[0].content.decode()
        request_body = request_body.replace(quote(ticket, safe=""), "{TICKET}").replace(token.raw, "{CLAIM_TOKEN}")
        match("token_request.txt", request_body + "\n")
        match("token_response.json", token_exchange[1].content.decode().replace(rpt, "{RPT}") + "\n")

        def segments(raw, pub):
            head, body, sig = raw.split(".")
            pub.verify(_b64d(sig), f"{head}.{body}".encode())  # raises on a bad signature
            return _b64d(head).decode(), _b64d(body).decode()

        claim_head, claim_body = segments(token.raw, IDP_KEY.public_key())
        match("claim_token_header.json", claim_head + "\n")
        match("claim_token_payload.json", claim_body + "\n")
        as_pub = tokens.from_jwk(jwks["keys"][0])
        rpt_head, rpt_body = segments(rpt, as_pub)
        match("rpt_header.json", rpt_head + "\n")
        match("rpt_payload.json", normalise(rpt_body, dep) + "\n")
        st["detail"] = f"{len(checked)} fixtures byte-equal, claim and RPT signatures verified"
