"""Hypothesis strategies shared by the codec and acceptance tests."""

from hypothesis import strategies as st

from agentmobility.acl import AclMessage, AgentIdentifier, Content, ContentKind, Performative

# surrogates cannot be encoded as UTF-8
text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=12)
word = st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="@"),
               min_size=1, max_size=8)

identifiers = st.builds(
    lambda local, platform, addrs: AgentIdentifier(f"{local}@{platform}", tuple(addrs)),
    word, word, st.lists(word, max_size=2))

leaf = st.one_of(text, st.lists(text, max_size=3))
frames = st.recursive(
    st.dictionaries(word, leaf, max_size=3),
    lambda inner: st.dictionaries(word, st.one_of(leaf, inner), max_size=3),
    max_leaves=6)


@st.composite
def contents(draw):
    kind = draw(st.sampled_from(ContentKind))
    payload = draw(frames)
    name = draw(word) if kind in (ContentKind.ACTION, ContentKind.PREDICATE) else draw(st.none() | word)
    if kind is ContentKind.ERROR:
        payload = {**payload, "reason": draw(word)}
    return Content(kind, name, payload)


messages = st.builds(
    AclMessage,
    performative=st.sampled_from(Performative),
    sender=identifiers,
    receiver=identifiers,
    conversation_id=word,
    protocol=text,
    ontology=text,
    content=contents(),
    reply_with=st.none() | text,
    in_reply_to=st.none() | text,
)
