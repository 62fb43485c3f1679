"""Core email record types shared by the whole pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

HAM, SPAM = 0, 1


@dataclass(frozen=True)
class UrlRecord:
    """One URL found in a message body or href attribute."""

    raw: str
    host: str
    is_shortened: bool
    is_homograph_suspect: bool


@dataclass(frozen=True)
class AttachmentRecord:
    """One attachment, identified by (filename, digest)."""

    filename: str
    mime_type: str
    digest: str
    size_bytes: int


@dataclass(frozen=True)
class AuthFlags:
    """Tri-state authentication results: True=pass, False=fail, None=absent."""

    spf_pass: Optional[bool] = None
    dkim_pass: Optional[bool] = None
    dmarc_pass: Optional[bool] = None


@dataclass
class EmailDocument:
    """One parsed email with every extractable field populated.

    Missing headers are recorded as None, never as defaults; an unparseable
    Date yields timestamp None rather than epoch 0.
    """

    id: str
    raw_hash: str
    subject: str = ""
    body: str = ""
    sender_address: Optional[str] = None
    sender_domain: Optional[str] = None
    recipient_addresses: list[str] = field(default_factory=list)
    reply_to: Optional[str] = None
    timestamp: Optional[float] = None
    urls: list[UrlRecord] = field(default_factory=list)
    attachments: list[AttachmentRecord] = field(default_factory=list)
    auth_flags: AuthFlags = field(default_factory=AuthFlags)
    label: Optional[int] = None
    message_id: Optional[str] = None
    in_reply_to: Optional[str] = None

    def __post_init__(self):
        if self.sender_address is not None and self.sender_domain is None:
            _, _, dom = self.sender_address.rpartition("@")
            self.sender_domain = dom.lower() or None
