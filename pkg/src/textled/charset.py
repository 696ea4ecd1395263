"""Character inventory, label encoding, and token sequences.

The default charset is the 26 lowercase letters followed by the 10 digits
(36 ordinary symbols).  Four special token ids are appended after the
ordinary range: [ENC] (encoder prefix), [BOS], [EOS], [PAD].
"""

from dataclasses import dataclass, field

from .errors import LengthViolation, UnknownSymbol

N_MAX = 25

DEFAULT_SYMBOLS = "abcdefghijklmnopqrstuvwxyz0123456789"

ROLE_ENCODER_INPUT = "encoder-input"
ROLE_DECODER_INPUT = "decoder-input"
ROLE_DECODER_TARGET = "decoder-target"


@dataclass(frozen=True)
class CharSet:
    """Ordered symbol inventory plus special token ids.

    Special ids come right after the ordinary symbol range:
    enc_id = K, bos_id = K+1, eos_id = K+2, pad_id = K+3 for K symbols.
    """

    symbols: tuple = tuple(DEFAULT_SYMBOLS)
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("charset symbols must be unique")
        object.__setattr__(self, "_lookup", {s: i for i, s in enumerate(self.symbols)})

    @classmethod
    def default36(cls) -> "CharSet":
        return cls(tuple(DEFAULT_SYMBOLS))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def enc_id(self) -> int:
        return self.size

    @property
    def bos_id(self) -> int:
        return self.size + 1

    @property
    def eos_id(self) -> int:
        return self.size + 2

    @property
    def pad_id(self) -> int:
        return self.size + 3

    @property
    def vocab_size(self) -> int:
        """Ordinary symbols plus the four specials."""
        return self.size + 4

    def index(self, symbol: str) -> int:
        try:
            return self._lookup[symbol]
        except KeyError:
            raise UnknownSymbol(f"symbol {symbol!r} not in charset") from None

    def symbol(self, index: int) -> str:
        if not 0 <= index < self.size:
            raise UnknownSymbol(f"index {index} outside ordinary symbol range")
        return self.symbols[index]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._lookup


@dataclass(frozen=True)
class Label:
    """Index-encoded text label, 1..N_MAX ordinary symbols."""

    indices: tuple

    def __post_init__(self):
        n = len(self.indices)
        if not 1 <= n <= N_MAX:
            raise LengthViolation(f"label length {n} outside [1, {N_MAX}]")

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    role: str


def encode_label(text: str, charset: CharSet) -> Label:
    """Case-fold and index a text label. Raises on unknown symbols or bad length."""
    folded = text.lower()
    if not 1 <= len(folded) <= N_MAX:
        raise LengthViolation(f"label {text!r} has length {len(folded)}, want 1..{N_MAX}")
    return Label(tuple(charset.index(ch) for ch in folded))


def decode_label(label: Label, charset: CharSet) -> str:
    return "".join(charset.symbol(i) for i in label.indices)


def tokenize_for_encoder(label: Label, charset: CharSet) -> TokenSequence:
    """Prefix the label's character tokens with [ENC]."""
    return TokenSequence((charset.enc_id,) + label.indices, ROLE_ENCODER_INPUT)


def tokenize_for_decoder(label: Label, charset: CharSet):
    """Teacher-forcing pair: ([BOS]+chars, chars+[EOS]); equal lengths n+1."""
    dec_in = TokenSequence((charset.bos_id,) + label.indices, ROLE_DECODER_INPUT)
    dec_tgt = TokenSequence(label.indices + (charset.eos_id,), ROLE_DECODER_TARGET)
    return dec_in, dec_tgt
