"""Deterministic synthetic corpus generator for the three tactic-drift phases.

P1 spam is keyword/template mail-merge (lottery, invoice, password-reset)
with clean URLs; P2 layers leet/zero-width/homoglyph obfuscation and
rotated look-alike sender domains onto P1; P3 uses paraphrased fluent
templates with a forged Reply-To, failing SPF, homograph URL hosts, and a
decoy attachment. Ham is a fixed bank of newsletters and work threads used
across all phases. Generation is byte-deterministic under the seed.
"""

from __future__ import annotations

import base64
import email.header
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .documents import EmailDocument
from .parser import parse_email

BASE_TIME = 1709251200.0  # 2024-03-01T00:00:00Z
WINDOW_SECONDS = 30 * 86400.0

HAM_DOMAINS = ("corp.example.com", "lists.example.org", "news.example.net",
               "updates.example.io")

P1_SPAM_DOMAINS = tuple(f"promo-{w}.example" for w in (
    "mega", "gold", "lucky", "bonus", "prime", "star", "vip", "extra",
    "grand", "rapid", "super", "royal"))

P2_LOOKALIKE_FAMILIES = (
    ("paypa1-billing.example", "paypal-bi11ing.example", "paypall-billing.example"),
    ("arnazon-alerts.example", "amaz0n-alerts.example", "amazon-a1erts.example"),
    ("rnicrosoft-id.example", "micros0ft-id.example", "rnicr0soft-id.example"),
    ("app1e-support.example", "appie-support.example", "apple-supp0rt.example"),
)

# Legitimate document hosts abused by half of the P3 campaign.
COMPROMISED_HOSTS = ("docs.example.org", "updates.example.io",
                     "news.example.net")

# Cyrillic homographs: secure-pay family hosts differ by lookalike glyphs.
HOMOGRAPH_FAMILIES = (
    ("secure-pay.example", "secуre-pay.example", "secure-pаy.example"),
    ("login-portal.example", "lоgin-portal.example", "login-pоrtal.example"),
    ("account-verify.example", "аccount-verify.example",
     "account-vеrify.example"),
)

HAM_TEMPLATES = (
    ("hamt0", "Weekly engineering digest",
     "Hello team, the weekly digest covers sprint progress, code review "
     "throughput, and the roadmap discussion from Monday. Full notes at "
     "http://news.example.net/weekly/{code}. See you Thursday."),
    ("hamt1", "Lunch plans for {day}",
     "Hey, are we still on for lunch on {day}? The usual place at noon "
     "works for me. Menu is at http://cafe.example.com/menu/{code} if you "
     "want to look ahead."),
    ("hamt2", "Minutes from the budget sync",
     "The budget sync concluded we hold headcount steady and revisit "
     "vendor costs next quarter. Comments welcome on the shared doc at "
     "http://docs.example.org/budget/{code}."),
    ("hamt3", "Conference travel booking",
     "Your travel request for the systems conference was approved by "
     "{name}. Book flights through http://travel.example.com/portal/{code} "
     "before Friday."),
    ("hamt4", "Library hold available",
     "The title you requested is ready for pickup at the front desk until "
     "{day}. Opening hours are unchanged this month."),
    ("hamt5", "Team offsite agenda draft",
     "Draft agenda for the offsite: morning retrospective, afternoon "
     "planning, evening dinner. Reply with topics you want added."),
    ("hamt6", "Monthly newsletter: product updates",
     "This month we shipped dashboard filters, faster exports, and fixed "
     "the calendar sync. Read more at http://updates.example.io/changelog/{code}."),
    ("hamt7", "Re: design review notes",
     "Thanks for the notes, {name}. I folded the feedback about margins "
     "into the latest mockups at http://docs.example.org/design/{code} and "
     "scheduled a follow-up for {day}."),
    ("hamt8", "Quarterly report draft attached",
     "The quarterly report draft is in the shared folder at "
     "http://docs.example.org/reports/{code}. Numbers for the east region "
     "still need a second pass before submission."),
    ("hamt9", "Standup moved to 10am",
     "Quick note: standup moves to 10am starting {day} so the platform "
     "group can join. Same room, same link."),
)

# family: lottery / invoice / password-reset; every body carries P1 markers.
P1_SPAM_TEMPLATES = (
    ("p1t0", "You are our lottery WINNER",
     "Congratulations {name}! Your email won the international lottery "
     "grand prize of ${amount}. Claim your winner reward now at "
     "http://{host}/claim?id={code} before it expires."),
    ("p1t1", "Claim your prize reward today",
     "Dear friend, a prize of ${amount} is reserved for you. Click "
     "http://{host}/prize/{code} to claim the reward. Act now, winner!"),
    ("p1t2", "Lottery payout notification {code}",
     "Final notice: the lottery board approved your payout of ${amount}. "
     "Visit http://{host}/payout?ref={code} to claim your prize."),
    ("p1t3", "Invoice {code} payment overdue",
     "Our records show invoice {code} of ${amount} is overdue. Settle the "
     "payment immediately at http://{host}/invoice/{code} to avoid fees."),
    ("p1t4", "URGENT: unpaid invoice attached",
     "This is a reminder that your payment of ${amount} is overdue. Review "
     "the invoice at http://{host}/billing?id={code} and pay today."),
    ("p1t5", "Payment required for invoice {code}",
     "Invoice {code} remains unpaid. Complete the payment of ${amount} at "
     "http://{host}/pay/{code} or your account will be suspended."),
    ("p1t6", "Password reset required now",
     "Your mailbox password expires today. Verify your account and reset "
     "the password at http://{host}/reset?u={code} to keep access."),
    ("p1t7", "Verify your account password",
     "Unusual sign-in detected. Verify your password immediately at "
     "http://{host}/verify/{code} or the account will be locked."),
    ("p1t8", "Account verification needed",
     "Action required: verify your account within 24 hours. Reset your "
     "password at http://{host}/account?sid={code} to continue."),
    ("p1t9", "Winner confirmation {code}",
     "You were selected as this week's winner, {name}! A prize of "
     "${amount} awaits. Claim it at http://{host}/winner/{code} today."),
)

# fluent paraphrase variants; rendered with forged Reply-To, SPF fail,
# homograph URL host and a decoy attachment. Bodies deliberately read like
# ordinary work mail: the drift away from P1 keyword templates is the point.
P3_SPAM_TEMPLATES = (
    ("p3t0", (
        ("Payroll profile check",
         "Hi {name}, the payroll sync flagged one profile for a quick "
         "confirmation at http://{host}/payroll/{code} before the next run."),
        ("Quick payroll confirmation",
         "Hello {name}, one step remains on the payroll profile review; the "
         "page at http://{host}/payroll/{code} takes a minute."),
    )),
    ("p3t1", (
        ("Signature requested",
         "Good morning {name}, the revised vendor agreement is staged for "
         "signature at http://{host}/sign/{code} whenever you have a moment."),
        ("Vendor agreement ready",
         "Hi {name}, following the vendor call the final copy now sits at "
         "http://{host}/sign/{code} awaiting your signature."),
    )),
    ("p3t2", (
        ("Storage settings note",
         "Hello {name}, the storage migration left one setting unconfirmed; "
         "see http://{host}/mailbox/{code} to finish the move."),
        ("Migration follow-up",
         "Hi {name}, a last confirmation at http://{host}/mailbox/{code} "
         "completes the mailbox migration from this week."),
    )),
    ("p3t3", (
        ("Enrollment window closing",
         "Hi {name}, the benefits window closes Friday; current elections "
         "are summarized at http://{host}/benefits/{code}."),
        ("Benefits reminder",
         "Hello {name}, a few days remain for benefits changes; the summary "
         "sits at http://{host}/benefits/{code}."),
    )),
    ("p3t4", (
        ("Reimbursement cleared",
         "Good afternoon {name}, the travel reimbursement cleared review; "
         "confirming the transfer at http://{host}/reimburse/{code} releases it."),
        ("Transfer confirmation",
         "Hi {name}, finance approved the reimbursement; a short confirmation "
         "at http://{host}/reimburse/{code} releases the funds."),
    )),
    ("p3t5", (
        ("Sign-in review",
         "Dear {name}, the quarterly review lists a sign-in from a new "
         "device; acknowledge it at http://{host}/review/{code} if it was you."),
        ("New device noted",
         "Hello {name}, routine monitoring recorded a new device; see "
         "http://{host}/review/{code} to acknowledge or dispute it."),
    )),
    ("p3t6", (
        ("Access groups after reorg",
         "Hi {name}, access groups are being rebalanced after the reorg; "
         "confirm the team assignment at http://{host}/org/{code}."),
        ("Team assignment check",
         "Hello {name}, verifying the assignment at http://{host}/org/{code} "
         "keeps permissions intact through the reorg."),
    )),
    ("p3t7", (
        ("Audit reconciliation note",
         "Good morning {name}, the audit pass noted a small difference on "
         "one record; the proposed fix is at http://{host}/audit/{code}."),
        ("Small audit correction",
         "Hi {name}, reconciliation flagged one line; details and the "
         "correction sit at http://{host}/audit/{code}."),
    )),
    ("p3t8", (
        ("Calendar delegation expiring",
         "Dear {name}, a calendar delegation reaches its end date soon; "
         "renew or revoke it at http://{host}/calendar/{code}."),
        ("Delegation renewal",
         "Hello {name}, the delegation renewal page is "
         "http://{host}/calendar/{code}; it closes end of week."),
    )),
    ("p3t9", (
        ("Follow-up from the AMA",
         "Hi {name}, thanks for the question at the session; the full answer "
         "and the deck are shared at http://{host}/ama/{code}."),
        ("AMA answer posted",
         "Hello {name}, the follow-up answer from the session was posted at "
         "http://{host}/ama/{code}."),
    )),
)

P1_MARKERS = ("lottery", "winner", "prize", "claim", "invoice", "overdue",
              "payment", "password", "verify", "reset")

_NAMES = ("alex", "sam", "jordan", "casey", "riley", "morgan", "taylor", "drew")
_DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday")

LEET = {"a": "4", "e": "3", "i": "1", "o": "0", "s": "5"}
HOMOGLYPH = {"a": "а", "e": "е", "o": "о", "c": "с",
             "p": "р"}
ZWJ = "‍"


@dataclass
class PhaseSpec:
    phase: str  # P1 | P2 | P3
    n_emails: int
    spam_ratio: float
    seed: int
    base_time: float = BASE_TIME
    window_seconds: float = WINDOW_SECONDS

    def validate(self):
        if self.phase not in ("P1", "P2", "P3"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if not 0.0 < self.spam_ratio < 1.0:
            raise ValueError("spam_ratio must lie in (0, 1)")


def _header_value(text: str) -> str:
    if all(ord(c) < 128 for c in text):
        return text
    return email.header.Header(text, "utf-8").encode()


def _rfc2822_date(ts: float) -> str:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    days = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
    months = ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep",
              "Oct", "Nov", "Dec")
    return (f"{days[dt.weekday()]}, {dt.day:02d} {months[dt.month - 1]} "
            f"{dt.year} {dt.hour:02d}:{dt.minute:02d}:{dt.second:02d} +0000")


def _render_message(headers: list[tuple[str, str]], body: str,
                    attachment: Optional[tuple[str, bytes]] = None,
                    boundary: str = "") -> bytes:
    lines = [f"{k}: {_header_value(v)}" for k, v in headers]
    if attachment is None:
        lines += ["Content-Type: text/plain; charset=utf-8",
                  "Content-Transfer-Encoding: 8bit", "", body]
        return ("\n".join(lines)).encode("utf-8")
    filename, payload = attachment
    b64 = base64.b64encode(payload).decode("ascii")
    chunks = "\n".join(b64[i:i + 72] for i in range(0, len(b64), 72))
    lines += [
        f'Content-Type: multipart/mixed; boundary="{boundary}"', "",
        f"--{boundary}",
        "Content-Type: text/plain; charset=utf-8",
        "Content-Transfer-Encoding: 8bit", "", body, "",
        f"--{boundary}",
        "Content-Type: application/pdf",
        f'Content-Disposition: attachment; filename="{filename}"',
        "Content-Transfer-Encoding: base64", "", chunks,
        f"--{boundary}--", "",
    ]
    return ("\n".join(lines)).encode("utf-8")


def _obfuscate(text: str, rng: np.random.Generator) -> str:
    """P2 obfuscation: leet plus a guaranteed homoglyph or zero-width mark."""
    words = text.split(" ")
    candidates = [i for i, w in enumerate(words) if len(w) >= 4 and w.isalpha()]
    if not candidates:
        return text + ZWJ
    n_mut = max(2, (3 * len(candidates)) // 4)
    picked = rng.choice(candidates, size=min(n_mut, len(candidates)), replace=False)
    non_ascii_done = False
    for j in sorted(int(p) for p in picked):
        w = words[j]
        op = int(rng.integers(0, 3))
        if op == 0:
            w = "".join(LEET.get(c, c) for c in w)
        elif op == 1:
            pos = [i for i, c in enumerate(w) if c in HOMOGLYPH]
            if pos:
                i = pos[int(rng.integers(0, len(pos)))]
                w = w[:i] + HOMOGLYPH[w[i]] + w[i + 1:]
                non_ascii_done = True
        else:
            cut = int(rng.integers(1, len(w)))
            w = w[:cut] + ZWJ + w[cut:]
            non_ascii_done = True
        words[j] = w
    out = " ".join(words)
    if not non_ascii_done:
        # guarantee at least one non-ASCII/zero-width marker per email
        out = out.replace(" ", " " + ZWJ, 1)
    return out


def _spam_email(phase: str, i: int, rng: np.random.Generator,
                base_time: float, window: float) -> tuple[bytes, str]:
    ts = base_time + float(rng.uniform(0, window))
    name = _NAMES[int(rng.integers(0, len(_NAMES)))]
    amount = f"{int(rng.integers(1, 10)) * 1000},000"
    code = f"{int(rng.integers(10 ** 5, 10 ** 6))}"

    if phase in ("P1", "P2"):
        tid, subject, body_t = P1_SPAM_TEMPLATES[int(rng.integers(0, len(P1_SPAM_TEMPLATES)))]
        if phase == "P1":
            domain = P1_SPAM_DOMAINS[int(rng.integers(0, len(P1_SPAM_DOMAINS)))]
        else:
            family = P2_LOOKALIKE_FAMILIES[int(rng.integers(0, len(P2_LOOKALIKE_FAMILIES)))]
            domain = family[int(rng.integers(0, len(family)))]
        host = f"go.{domain}"
        body = body_t.format(name=name, amount=amount, code=code, host=host)
        if phase == "P2":
            subject = _obfuscate(subject, rng)
            body = _obfuscate(body, rng)
        headers = [
            ("From", f"alerts@{domain}"),
            ("To", f"user{int(rng.integers(0, 40))}@corp.example.com"),
            ("Subject", subject),
            ("Date", _rfc2822_date(ts)),
            ("Message-ID", f"<{phase.lower()}-spam-{i}@synth.example>"),
            ("Authentication-Results", "mx.synth.example; spf=pass; dkim=pass"),
            ("X-Evomail-Label", "spam"),
        ]
        return _render_message(headers, body), tid

    tid, variants = P3_SPAM_TEMPLATES[int(rng.integers(0, len(P3_SPAM_TEMPLATES)))]
    subject, body_t = variants[int(rng.integers(0, len(variants)))]
    family = HOMOGRAPH_FAMILIES[int(rng.integers(0, len(HOMOGRAPH_FAMILIES)))]
    # half the campaign rides compromised legitimate hosts, half homographs
    if rng.random() < 0.5:
        host = COMPROMISED_HOSTS[int(rng.integers(0, len(COMPROMISED_HOSTS)))]
    else:
        host = family[int(rng.integers(1, len(family)))]
    sender_domain = f"notice-{int(rng.integers(0, 24))}.example"  # rotating
    reply_domain = f"relay-{int(rng.integers(0, 24))}.example"
    body = body_t.format(name=name, code=code, host=host)
    headers = [
        ("From", f"notifications@{sender_domain}"),
        ("Reply-To", f"desk{int(rng.integers(0, 50))}@{reply_domain}"),
        ("To", f"user{int(rng.integers(0, 40))}@corp.example.com"),
        ("Subject", subject),
        ("Date", _rfc2822_date(ts)),
        ("Message-ID", f"<p3-spam-{i}@synth.example>"),
        ("Authentication-Results", "mx.synth.example; spf=fail; dkim=fail; dmarc=fail"),
        ("X-Evomail-Label", "spam"),
    ]
    decoy = (f"%PDF-1.4\n% decoy attachment for {tid}\n").encode() * 4
    boundary = f"=-synth-{int(rng.integers(10 ** 8, 10 ** 9))}"
    return _render_message(headers, body, attachment=(f"{tid}-notice.pdf", decoy),
                           boundary=boundary), tid


def _ham_email(i: int, rng: np.random.Generator, base_time: float, window: float,
               prior_ids: list[str]) -> tuple[bytes, str]:
    ts = base_time + float(rng.uniform(0, window))
    tid, subject_t, body_t = HAM_TEMPLATES[int(rng.integers(0, len(HAM_TEMPLATES)))]
    slots = {
        "name": _NAMES[int(rng.integers(0, len(_NAMES)))],
        "day": _DAYS[int(rng.integers(0, len(_DAYS)))],
        "code": f"{int(rng.integers(100, 999))}",
    }
    subject = subject_t.format(**slots)
    body = body_t.format(**slots)
    domain = HAM_DOMAINS[int(rng.integers(0, len(HAM_DOMAINS)))]
    msg_id = f"<ham-{i}@synth.example>"
    in_reply_to = None
    if prior_ids and rng.random() < 0.3:
        in_reply_to = prior_ids[int(rng.integers(0, len(prior_ids)))]
        subject = f"Re: {subject}"
    headers = [
        ("From", f"{_NAMES[int(rng.integers(0, len(_NAMES)))]}@{domain}"),
        ("To", f"user{int(rng.integers(0, 40))}@corp.example.com"),
        ("Subject", subject),
        ("Date", _rfc2822_date(ts)),
        ("Message-ID", msg_id),
        ("Authentication-Results", "mx.synth.example; spf=pass; dkim=pass"),
        ("X-Evomail-Label", "ham"),
    ]
    if in_reply_to is not None:
        headers.insert(5, ("In-Reply-To", in_reply_to))
    prior_ids.append(msg_id)
    return _render_message(headers, body), tid


def generate_phase_raw(spec: PhaseSpec) -> list[tuple[bytes, str, int]]:
    """(raw message bytes, template id, label) per email, order shuffled."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, {"P1": 1, "P2": 2, "P3": 3}[spec.phase]])
    n_spam = int(round(spec.n_emails * spec.spam_ratio))
    n_ham = spec.n_emails - n_spam
    out: list[tuple[bytes, str, int]] = []
    for i in range(n_spam):
        raw, tid = _spam_email(spec.phase, i, rng, spec.base_time, spec.window_seconds)
        out.append((raw, tid, 1))
    prior: list[str] = []
    for i in range(n_ham):
        raw, tid = _ham_email(i, rng, spec.base_time, spec.window_seconds, prior)
        out.append((raw, tid, 0))
    perm = rng.permutation(len(out))
    return [out[int(j)] for j in perm]


def generate_phase_corpus(spec: PhaseSpec) -> list[EmailDocument]:
    """Parsed, labeled documents; ids embed phase/template for campaign joins."""
    docs = []
    for n, (raw, tid, label) in enumerate(generate_phase_raw(spec)):
        doc = parse_email(raw, "eml")
        doc.id = f"{spec.phase}-{'spam' if label else 'ham'}-{tid}-{n:05d}"
        doc.label = label
        docs.append(doc)
    return docs


def template_id_of(doc_id: str) -> str:
    """Recover the template/campaign id embedded in a synthetic doc id."""
    parts = doc_id.split("-")
    return parts[2] if len(parts) >= 4 else ""


def write_mbox(path: str | Path, spec: PhaseSpec) -> int:
    """Render the phase corpus as an mbox file; returns the message count."""
    entries = generate_phase_raw(spec)
    blob = b"".join(b"From synth@example Thu Jan  1 00:00:00 2024\n" + raw + b"\n\n"
                    for raw, _, _ in entries)
    Path(path).write_bytes(blob)
    return len(entries)
