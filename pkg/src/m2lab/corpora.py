"""Three synthetic text sources with distinct vocabularies and sentence shapes.

They stand in for a web crawl, an encyclopedia and a book collection at desk
scale: each source has its own word lists and templates, so a masked-language
model can learn their statistics quickly and the sources stay distinguishable.
"""

import numpy as np

SOURCE_NAMES = ("web", "wiki", "books")

_WEB = {
    "verb": "buy find get order try compare download read watch join save book".split(),
    "adj": "cheap new best free fast easy top great local online smart simple".split(),
    "noun": "shoes deals phones laptops tickets hotels recipes games tools cars bikes loans".split(),
    "time": "today now tonight this week this month".split(" "),
}
_WIKI = {
    "name": "alder brenton corvale dunmore estrid falkirk galen hollis ivara jorvik".split(),
    "kind": "river town mountain county island lake valley castle forest bridge".split(),
    "place": "norland the eastern march the south coast westmere the high plains".split(" "),
    "num": "twelve forty ninety three hundred eighteen seven".split(),
}
_BOOKS = {
    "who": "she he the old man the girl my mother the captain nobody".split(" "),
    "said": "said whispered shouted replied asked laughed".split(),
    "what": "we should go home it is getting late the door was open nothing had changed".split(" "),
    "feel": "slowly quietly softly suddenly again".split(),
}


def _pick(rng, words):
    return words[int(rng.integers(len(words)))]


def _web_sentence(rng):
    w = _WEB
    forms = [
        lambda: f"{_pick(rng, w['verb'])} {_pick(rng, w['adj'])} {_pick(rng, w['noun'])} {_pick(rng, w['time'])}.",
        lambda: f"the {_pick(rng, w['adj'])} {_pick(rng, w['noun'])} are here.",
        lambda: f"click to {_pick(rng, w['verb'])} {_pick(rng, w['noun'])}!",
    ]
    return forms[int(rng.integers(len(forms)))]()


def _wiki_sentence(rng):
    w = _WIKI
    forms = [
        lambda: f"{_pick(rng, w['name'])} is a {_pick(rng, w['kind'])} in {_pick(rng, w['place'])}.",
        lambda: f"the {_pick(rng, w['kind'])} of {_pick(rng, w['name'])} has {_pick(rng, w['num'])} parts.",
        lambda: f"{_pick(rng, w['name'])} lies near {_pick(rng, w['name'])}.",
    ]
    return forms[int(rng.integers(len(forms)))]()


def _books_sentence(rng):
    w = _BOOKS
    forms = [
        lambda: f"\"{_pick(rng, w['what'])},\" {_pick(rng, w['who'])} {_pick(rng, w['said'])} {_pick(rng, w['feel'])}.",
        lambda: f"{_pick(rng, w['who'])} {_pick(rng, w['said'])} that {_pick(rng, w['what'])}.",
    ]
    return forms[int(rng.integers(len(forms)))]()


_SENTENCE = {"web": _web_sentence, "wiki": _wiki_sentence, "books": _books_sentence}


def make_source(name, n_passages=200, min_sentences=2, max_sentences=10, seed=0):
    """List of passages, each a few sentences drawn from ``name``'s templates."""
    rng = np.random.default_rng([seed, SOURCE_NAMES.index(name)])
    sentence = _SENTENCE[name]
    passages = []
    for _ in range(n_passages):
        k = int(rng.integers(min_sentences, max_sentences + 1))
        passages.append(" ".join(sentence(rng) for _ in range(k)))
    return passages


def desk_sources(n_passages=200, seed=0):
    return [make_source(name, n_passages, seed=seed) for name in SOURCE_NAMES]
