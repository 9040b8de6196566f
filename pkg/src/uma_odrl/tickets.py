"""Permission tickets: opaque, single-use, expiring handles to requested permissions."""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from typing import Dict, List, Sequence

from .permissions import RequestedPermission

DEFAULT_TICKET_TTL = timedelta(seconds=300)


class TicketError(Exception):
    pass


class EmptyRequest(TicketError, ValueError):
    pass


class UnknownTicket(TicketError):
    pass


class ExpiredTicket(TicketError):
    pass


class ConsumedTicket(TicketError):
    pass


@dataclass(frozen=True)
class PermissionTicket:
    ticket: str
    requested: tuple
    issued_at: datetime
    expires_at: datetime
    consumed: bool = False


class TicketManager:
    """In-memory ticket storage, safe for concurrent handlers.

    Tickets carry 256 bits from ``secrets``; expiry is strict (a ticket is still
    valid at exactly ``expires_at``) and is enforced at resolve time whether or
    not ``purge`` has run.
    """

    def __init__(self, ttl: timedelta = DEFAULT_TICKET_TTL):
        if ttl <= timedelta(0):
            raise ValueError("ticket ttl must be positive")
        self.ttl = ttl
        self._lock = threading.Lock()
        self._tickets: Dict[str, PermissionTicket] = {}

    def __len__(self) -> int:
        return len(self._tickets)

    def issue(self, requested: Sequence[RequestedPermission], now: datetime) -> PermissionTicket:
        requested = tuple(requested)
        if not requested:
            raise EmptyRequest("a ticket needs at least one permission")
        with self._lock:
            value = secrets.token_urlsafe(32)
            while value in self._tickets:
                value = secrets.token_urlsafe(32)
            ticket = PermissionTicket(value, requested, now, now + self.ttl)
            self._tickets[value] = ticket
        return ticket

    def resolve(self, ticket: str, now: datetime) -> List[RequestedPermission]:
        with self._lock:
            current = self._tickets.get(ticket)
            if current is None:
                raise UnknownTicket("unknown ticket")
            if current.consumed:
                raise ConsumedTicket("ticket already used")
            if now > current.expires_at:
                raise ExpiredTicket("ticket expired")
            self._tickets[ticket] = replace(current, consumed=True)
        return list(current.requested)

    def peek(self, ticket: str) -> PermissionTicket:
        """Look a ticket up without consuming it."""
        try:
            return self._tickets[ticket]
        except KeyError:
            raise UnknownTicket("unknown ticket") from None

    def purge(self, now: datetime) -> int:
        with self._lock:
            dead = [k for k, t in self._tickets.items() if t.consumed or now > t.expires_at]
            for k in dead:
                del self._tickets[k]
        return len(dead)
