"""Byte-level tokenizer: 256 byte ids plus four specials."""

PAD, CLS, SEP, MASK = 256, 257, 258, 259
SPECIALS = frozenset((PAD, CLS, SEP, MASK))
VOCAB_SIZE = 260


def text_bytes(text):
    return list(text.encode("utf-8"))


def wrap(content):
    return [CLS, *content, SEP]


def tokenize(text, max_len=None):
    """``[CLS] bytes [SEP]``, cut to ``max_len`` while keeping the closing SEP."""
    ids = wrap(text_bytes(text))
    if max_len is not None and len(ids) > max_len:
        ids = ids[:max_len - 1] + [SEP]
    return ids


def chunk(text, max_len):
    """Consecutive windows of ``max_len - 2`` bytes, each wrapped with CLS/SEP."""
    content = text_bytes(text)
    width = max_len - 2
    return [wrap(content[i:i + width]) for i in range(0, len(content), width)]


def detokenize(ids):
    return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")
