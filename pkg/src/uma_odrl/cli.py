"""``uma-odrl`` command line: run the servers, manage keys and policies, drive the flow."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import claims as claimlib
from . import tokens
from .client import direct_permissions, run_flow

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NOT_FOUND = 6

log = logging.getLogger("uma_odrl")


def _err(message: str) -> None:
    print(f"uma-odrl: {message}", file=sys.stderr)


def _split_listen(listen: str):
    host, _, port = listen.rpartition(":")
    return host or "127.0.0.1", int(port)


def _parse_claims(pairs: Sequence[str]) -> Dict[str, str]:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValueError(f"claim {pair!r} is not KEY=VALUE")
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def cmd_serve_as(args) -> int:
    from .authorization_server import ASConfig, AuthorizationServer, ConfigError, create_app

    try:
        cfg = ASConfig.load(args.config)
        server = AuthorizationServer.from_config(cfg)
        host, port = _split_listen(cfg.listen)
    except (ConfigError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    import uvicorn

    uvicorn.run(create_app(server), host=host, port=port, log_level=args.log_level)
    return EXIT_OK


def cmd_serve_rs(args) -> int:
    from .resource_server import ConfigError, ResourceServer, RSConfig, create_app

    try:
        cfg = RSConfig.load(args.config)
        server = ResourceServer.from_config(cfg)
        host, port = _split_listen(cfg.listen)
    except (ConfigError, ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    import uvicorn

    uvicorn.run(create_app(server), host=host, port=port, log_level=args.log_level)
    return EXIT_OK


# ---------------------------------------------------------------------------
# keys and claim tokens
# ---------------------------------------------------------------------------


def cmd_keygen(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        _err(f"{out} exists; pass --force to overwrite")
        return EXIT_USAGE
    key = tokens.generate_key()
    tokens.save_private_key(key, out)
    print(tokens.public_key_hex(key))
    return EXIT_OK


def _load_key(path: str):
    try:
        return tokens.load_private_key(path)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot load key {path}: {exc}") from None


def _mint(args) -> claimlib.ClaimToken:
    key = _load_key(args.key)
    exp = args.exp if args.exp is not None else int(time.time()) + args.ttl
    return claimlib.mint_test_token(args.webid, args.issuer, key, _parse_claims(args.claim), exp)


def cmd_mint_token(args) -> int:
    try:
        token = _mint(args)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(token.raw)
    if args.decode:
        header, payload = tokens.decode_unverified(token.raw)
        print(json.dumps({"header": header, "payload": payload}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify_token(args) -> int:
    try:
        if args.registry:
            registry = claimlib.IssuerRegistry.load(args.registry)
        elif args.key and args.issuer:
            registry = claimlib.IssuerRegistry({args.issuer: _load_key(args.key).public_key()})
        else:
            _err("give --registry, or --key with --issuer")
            return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    token = claimlib.ClaimToken(args.token.strip(), args.format)
    try:
        verified = claimlib.verify(token, registry, datetime.now(timezone.utc))
    except claimlib.ClaimError as exc:
        print(f"{type(exc).__name__}: {exc}")
        return EXIT_FAILURE
    print(json.dumps({"webid": verified.webid, "issuer": verified.issuer, "context": dict(verified.context)},
                     indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


def cmd_policy(args) -> int:
    from .odrl import PolicyError, parse_policy
    from .store import NotFound, store_load

    try:
        store = store_load(args.store)
    except PolicyError as exc:
        _err(f"policy store {args.store}: {exc}")
        return EXIT_USAGE
    if args.action == "add":
        try:
            policy = parse_policy(Path(args.file).read_bytes())
            store.put(policy)
        except OSError as exc:
            _err(str(exc))
            return EXIT_USAGE
        except PolicyError as exc:
            _err(f"{args.file}: {type(exc).__name__}: {exc}")
            return EXIT_USAGE
        print(policy.uid)
    elif args.action == "list":
        for policy in store.list():
            print(f"{policy.uid}\t{policy.policy_type.value}\t{len(policy.rules)} rule(s)")
    elif args.action == "remove":
        try:
            store.delete(args.uid)
        except NotFound:
            _err(f"no policy with uid {args.uid!r}")
            return EXIT_NOT_FOUND
    return EXIT_OK


# ---------------------------------------------------------------------------
# request
# ---------------------------------------------------------------------------


def _explain(args, token: Optional[claimlib.ClaimToken]) -> None:
    from . import engine
    from .store import store_load

    if token is None:
        print("explain: no claim token, nothing to evaluate", file=sys.stderr)
        return
    _, payload = tokens.decode_unverified(token.raw)
    local = claimlib.VerifiedClaims(
        webid=payload.get("webid", ""), issuer=payload.get("iss", ""),
        context={k: v for k, v in payload.items() if k not in claimlib.RESERVED_CLAIMS})
    requested = direct_permissions(args.method, args.url)
    sotw = engine.StateOfTheWorld(current_time=datetime.now(timezone.utc))
    reports = engine.evaluate_all(store_load(args.policy_store), local, requested, sotw)
    sys.stdout.write(engine.serialize_reports(reports).decode("utf-8"))


def cmd_request(args) -> int:
    token: Optional[claimlib.ClaimToken] = None
    try:
        if args.claim_token:
            token = claimlib.ClaimToken(args.claim_token.strip(), args.claim_token_format)
        elif args.webid_key:
            if not (args.webid and args.issuer):
                _err("--webid-key needs --webid and --issuer")
                return EXIT_USAGE
            args.key, args.exp = args.webid_key, None
            token = _mint(args)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    if args.direct and not args.as_uri:
        _err("--direct needs --as-uri")
        return EXIT_USAGE
    if args.explain and not args.policy_store:
        _err("--explain needs --policy-store (a co-located AS store)")
        return EXIT_USAGE

    body = b""
    if args.data is not None:
        body = args.data.encode("utf-8")
    elif args.data_file:
        body = Path(args.data_file).read_bytes()
    transcript = run_flow(args.method, args.url, claim_token=token, direct=args.direct, as_uri=args.as_uri,
                          body=body, content_type=args.content_type)
    if args.json:
        print(json.dumps(transcript.to_json(), indent=2, sort_keys=True))
    else:
        print(transcript.to_text())
    if args.explain:
        _explain(args, token)
    return transcript.exit_code


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uma-odrl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_ in (("serve-as", cmd_serve_as, "run the Authorization Server"),
                              ("serve-rs", cmd_serve_rs, "run the Resource Server")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--log-level", default="info")
        p.set_defaults(func=func)

    p = sub.add_parser("keygen", help="write a hex Ed25519 seed and print the public key")
    p.add_argument("out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_keygen)

    def token_flags(p, required: bool):
        p.add_argument("--webid", required=required)
        p.add_argument("--issuer", required=required)
        p.add_argument("--claim", action="append", default=[], metavar="KEY=VALUE",
                       help="extra claim, e.g. purpose=https://w3id.org/dpv#ResearchAndDevelopment")
        p.add_argument("--ttl", type=int, default=3600, help="seconds until expiry")

    p = sub.add_parser("mint-token", help="sign a claim token (stands in for an identity provider)")
    p.add_argument("--key", required=True)
    token_flags(p, required=True)
    p.add_argument("--exp", type=int, help="absolute expiry, seconds since the epoch")
    p.add_argument("--decode", action="store_true", help="also print the decoded header and payload")
    p.set_defaults(func=cmd_mint_token)

    p = sub.add_parser("verify-token", help="verify a claim token locally")
    p.add_argument("token")
    p.add_argument("--registry", help="issuer registry JSON")
    p.add_argument("--key", help="issuer key file (with --issuer)")
    p.add_argument("--issuer")
    p.add_argument("--format", default=claimlib.IDTOKEN_FORMAT)
    p.set_defaults(func=cmd_verify_token)

    p = sub.add_parser("policy", help="manage a policy store directory")
    psub = p.add_subparsers(dest="action", required=True)
    for action in ("add", "list", "remove"):
        ap = psub.add_parser(action)
        ap.add_argument("--store", required=True)
        if action == "add":
            ap.add_argument("file")
        if action == "remove":
            ap.add_argument("uid")
        ap.set_defaults(func=cmd_policy)

    p = sub.add_parser("request", help="run the UMA grant flow as the client")
    p.add_argument("method")
    p.add_argument("url")
    p.add_argument("--claim-token")
    p.add_argument("--claim-token-format", default=claimlib.IDTOKEN_FORMAT)
    p.add_argument("--webid-key", help="mint the claim token on the fly with this issuer key")
    token_flags(p, required=False)
    p.add_argument("--direct", action="store_true", help="skip the RS attempt and send permissions to the AS")
    p.add_argument("--as-uri")
    p.add_argument("--data")
    p.add_argument("--data-file")
    p.add_argument("--content-type")
    p.add_argument("--explain", action="store_true")
    p.add_argument("--policy-store")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_request)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
