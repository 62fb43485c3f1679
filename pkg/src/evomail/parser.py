"""Robust EML/mbox parsing into EmailDocument records.

Built on the stdlib email package with a lenient policy: arbitrary bytes
either produce a document or a typed error (MalformedMessage /
UnsupportedEncoding), never an uncaught exception.
"""

from __future__ import annotations

import email
import email.message
import email.policy
import email.utils
import hashlib
import re
import unicodedata
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .documents import AttachmentRecord, AuthFlags, EmailDocument, UrlRecord
from .errors import MalformedMessage, UnsupportedEncoding

_URL_RE = re.compile(r"""https?://[^\s<>"')\]}]+""", re.IGNORECASE)
_HEADER_LINE_RE = re.compile(rb"^[!-9;-~]+:")

# Common link-shortener hosts; membership drives UrlRecord.is_shortened.
SHORTENER_HOSTS = frozenset({
    "bit.ly", "tinyurl.com", "goo.gl", "t.co", "ow.ly", "is.gd",
    "buff.ly", "rb.gy", "cutt.ly", "rebrand.ly", "shorturl.at", "tiny.cc",
})

_LABEL_HEADER = "X-Evomail-Label"


class _HtmlTextExtractor(HTMLParser):
    """Strips tags, keeps visible text, harvests href targets."""

    _SKIP = {"script", "style"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.chunks: list[str] = []
        self.hrefs: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip_depth += 1
        for name, value in attrs:
            if name == "href" and value:
                self.hrefs.append(value)

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip_depth:
            self._skip_depth -= 1

    def handle_data(self, data):
        if not self._skip_depth:
            self.chunks.append(data)


def strip_html(html_text: str) -> tuple[str, list[str]]:
    """Return (visible text, href targets) for an HTML fragment."""
    extractor = _HtmlTextExtractor()
    try:
        extractor.feed(html_text)
        extractor.close()
    except Exception:
        # html.parser is robust, but guard anyway: fall back to tag removal.
        return re.sub(r"<[^>]*>", " ", html_text), extractor.hrefs
    return " ".join(part for part in extractor.chunks if part.strip()), extractor.hrefs


def url_host(raw: str) -> str:
    """Host part of a URL per the module's own small grammar, lowercased."""
    rest = re.sub(r"^[a-zA-Z][a-zA-Z0-9+.-]*://", "", raw)
    host = re.split(r"[/?#]", rest, maxsplit=1)[0]
    host = host.rpartition("@")[2]          # strip userinfo
    host = host.rsplit(":", 1)[0] if re.search(r":\d*$", host) else host
    return host.lower()


def is_homograph_host(host: str) -> bool:
    """True for punycode labels or hosts mixing Latin with other scripts."""
    if any(label.startswith("xn--") for label in host.split(".")):
        return True
    scripts = set()
    for ch in host:
        if not ch.isalpha():
            continue
        name = unicodedata.name(ch, "")
        if name.startswith("LATIN"):
            scripts.add("latin")
        elif name.startswith("CYRILLIC"):
            scripts.add("cyrillic")
        elif name.startswith("GREEK"):
            scripts.add("greek")
    return len(scripts) > 1


def make_url_record(raw: str) -> UrlRecord:
    host = url_host(raw)
    return UrlRecord(
        raw=raw,
        host=host,
        is_shortened=host in SHORTENER_HOSTS,
        is_homograph_suspect=is_homograph_host(host),
    )


def extract_urls(text: str, extra_hrefs: Iterable[str] = ()) -> list[UrlRecord]:
    """All http(s) URLs in text plus harvested hrefs, deduplicated by exact string."""
    seen: dict[str, UrlRecord] = {}
    candidates = list(_URL_RE.findall(text))
    for href in extra_hrefs:
        if href.lower().startswith(("http://", "https://")):
            candidates.append(href)
    for raw in candidates:
        raw = raw.rstrip(".,;:!")
        if raw and raw not in seen:
            seen[raw] = make_url_record(raw)
    return list(seen.values())


def _normalize_address(value: str) -> Optional[str]:
    _, addr = email.utils.parseaddr(value)
    addr = addr.strip().lower()
    return addr or None


def _parse_auth_results(value: str) -> AuthFlags:
    flags = {}
    for mech in ("spf", "dkim", "dmarc"):
        m = re.search(rf"\b{mech}\s*=\s*(\w+)", value, re.IGNORECASE)
        if m:
            flags[f"{mech}_pass"] = m.group(1).lower() == "pass"
    return AuthFlags(**flags)


def _decode_bytes(payload: bytes, charset: Optional[str], offset: int) -> str:
    for candidate in (charset, "utf-8"):
        if not candidate:
            continue
        try:
            return payload.decode(candidate)
        except (UnicodeDecodeError, LookupError):
            continue
    try:
        return payload.decode("latin-1")
    except Exception as exc:  # pragma: no cover - latin-1 decodes any byte
        raise UnsupportedEncoding(str(exc), offset) from exc


def _walk_parts(msg: email.message.Message, offset: int) -> tuple[str, list[str], list[AttachmentRecord]]:
    """Concatenated text of all text parts, hrefs, and attachment records."""
    texts: list[str] = []
    hrefs: list[str] = []
    attachments: list[AttachmentRecord] = []
    att_keys = set()
    for part in msg.walk():
        if part.is_multipart():
            continue
        filename = part.get_filename()
        ctype = part.get_content_type()
        try:
            payload = part.get_payload(decode=True)
        except Exception:
            payload = None
        if payload is None:
            raw = part.get_payload()
            payload = raw.encode("utf-8", "replace") if isinstance(raw, str) else b""
        disposition = (part.get("Content-Disposition") or "").lower()
        is_attachment = bool(filename) or disposition.startswith("attachment")
        if is_attachment:
            digest = hashlib.sha256(payload).hexdigest()
            key = (filename or "", digest)
            if key not in att_keys:
                att_keys.add(key)
                attachments.append(AttachmentRecord(
                    filename=filename or "",
                    mime_type=ctype,
                    digest=digest,
                    size_bytes=len(payload),
                ))
            continue
        if ctype.startswith("text/"):
            text = _decode_bytes(payload, part.get_content_charset(), offset)
            if ctype == "text/html":
                text, part_hrefs = strip_html(text)
                hrefs.extend(part_hrefs)
            texts.append(text)
    return "\n".join(t for t in texts if t), hrefs, attachments


def _looks_like_message(raw: bytes) -> bool:
    first_line = raw.split(b"\n", 1)[0].rstrip(b"\r")
    return bool(_HEADER_LINE_RE.match(first_line))


def parse_email(raw_bytes: bytes, format: str = "eml") -> EmailDocument:
    """Parse one raw message (format 'eml' or 'mbox_entry') into an EmailDocument.

    Raises MalformedMessage when the bytes carry no recognizable header
    block, UnsupportedEncoding when a text part defeats every decoder.
    Any other input produces a document with absent fields set to None.
    """
    if not raw_bytes:
        raise MalformedMessage("empty input", 0)
    if format not in ("eml", "mbox_entry"):
        raise MalformedMessage(f"unknown format {format!r}", 0)
    if format == "mbox_entry" and raw_bytes.startswith(b"From "):
        nl = raw_bytes.find(b"\n")
        raw_bytes = raw_bytes[nl + 1:] if nl >= 0 else b""
        if not raw_bytes:
            raise MalformedMessage("mbox entry with no message", 0)

    if not _looks_like_message(raw_bytes):
        raise MalformedMessage("no header block", 0)

    raw_hash = hashlib.sha256(raw_bytes).hexdigest()
    try:
        msg = email.message_from_bytes(raw_bytes, policy=email.policy.compat32)
    except Exception as exc:
        raise MalformedMessage(f"unparseable message: {exc}", 0) from exc

    if not msg.items():
        raise MalformedMessage("no header/body separator", 0)

    try:
        body, hrefs, attachments = _walk_parts(msg, 0)
    except UnsupportedEncoding:
        raise
    except Exception as exc:
        raise MalformedMessage(f"undecodable body: {exc}", 0) from exc

    def header(name: str) -> Optional[str]:
        value = msg.get(name)
        if value is None:
            return None
        try:
            decoded = str(email.header.make_header(email.header.decode_header(value)))
        except Exception:
            decoded = str(value)
        return decoded.strip() or None

    sender = _normalize_address(header("From") or "")
    recipients = []
    to_value = header("To")
    if to_value:
        for _, addr in email.utils.getaddresses([to_value]):
            addr = addr.strip().lower()
            if addr and addr not in recipients:
                recipients.append(addr)

    timestamp = None
    date_value = header("Date")
    if date_value:
        try:
            dt = email.utils.parsedate_to_datetime(date_value)
            if dt is not None:
                timestamp = dt.timestamp()
        except (TypeError, ValueError, OverflowError):
            timestamp = None

    auth = AuthFlags()
    auth_value = header("Authentication-Results")
    if auth_value:
        auth = _parse_auth_results(auth_value)

    label = None
    label_value = header(_LABEL_HEADER)
    if label_value in ("spam", "1"):
        label = 1
    elif label_value in ("ham", "0"):
        label = 0

    subject = header("Subject") or ""
    return EmailDocument(
        id=raw_hash[:16],
        raw_hash=raw_hash,
        subject=subject,
        body=body,
        sender_address=sender,
        sender_domain=None,
        recipient_addresses=recipients,
        reply_to=_normalize_address(header("Reply-To") or ""),
        timestamp=timestamp,
        urls=extract_urls(body, hrefs),
        attachments=attachments,
        auth_flags=auth,
        label=label,
        message_id=header("Message-ID"),
        in_reply_to=header("In-Reply-To"),
    )


def iter_mbox_entries(data: bytes) -> Iterator[bytes]:
    """Split an mbox byte blob on 'From ' separator lines."""
    if not data.startswith(b"From "):
        raise MalformedMessage("not an mbox: missing 'From ' line", 0)
    chunks = re.split(rb"(?:^|\n)(?=From )", data)
    for chunk in chunks:
        chunk = chunk.strip(b"\n")
        if chunk:
            yield chunk


def _uniquify(docs: list[EmailDocument]) -> list[EmailDocument]:
    seen: dict[str, int] = {}
    for doc in docs:
        n = seen.get(doc.id, 0)
        seen[doc.id] = n + 1
        if n:
            doc.id = f"{doc.id}-{n}"
    return docs


def load_mbox(path: str | Path) -> list[EmailDocument]:
    data = Path(path).read_bytes()
    return _uniquify([parse_email(entry, "mbox_entry") for entry in iter_mbox_entries(data)])


def load_eml(path: str | Path) -> EmailDocument:
    return parse_email(Path(path).read_bytes(), "eml")


def load_paths(paths: Iterable[str | Path]) -> list[EmailDocument]:
    """Load a mix of .eml files, mbox files, and directories of either."""
    docs: list[EmailDocument] = []
    for p in map(Path, paths):
        if p.is_dir():
            docs.extend(load_paths(sorted(p.iterdir())))
        elif p.suffix.lower() == ".eml":
            docs.append(load_eml(p))
        else:
            docs.extend(load_mbox(p))
    return _uniquify(docs)
