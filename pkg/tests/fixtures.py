"""Fixtures shared by the module tests and the acceptance suite."""

from fractions import Fraction

from hypothesis import strategies as st

from mtinstruct.geometry import NormBox
from mtinstruct.markup import GroundedSpan, GroundedText, PlainText

QUOTED = {
    "RefCOCO": "[refer] give me the location of {question}",
    "VizWiz": "[vqa] Based on the image, respond to this question with a single word or phrase: "
              "{question}, and reply 'unanswerable' when the provided information is insufficient",
    "HatefulMemes": "[vqa] This is an image with: {question} written on it. Is it hateful? Answer:",
    "VSR": "[vqa] Based on the image, is this statement true or false? {question}",
    "GQA": "[vqa] Based on the image, respond to this question with a single word or phrase: {question}",
}

# Stage inclusion rows: every listed dataset, with its inclusion per stage.
STAGE_ROWS = {
    "weakly-labeled": (["GRIT-20M (REC)", "GRIT-20M (REG)", "LAION", "CC3M", "SBU"], (1, 0, 0)),
    "grounded-caption": (["GRIT-20M grounded caption"], (1, 0, 0)),
    "caption": (["COCO caption", "Text Captions"], (1, 1, 1)),
    "rec": (["RefCOCO", "RefCOCO+", "RefCOCOg", "Visual Genome"], (1, 1, 1)),
    "reg": (["RefCOCO (REG)", "RefCOCO+ (REG)", "RefCOCOg (REG)"], (1, 1, 1)),
    "vqa": (["GQA", "VQAv2", "OCR-VQA", "OK-VQA", "AOK-VQA"], (1, 1, 1)),
    "multimodal-instruction": (["LLaVA", "Flickr30k", "Multi-task conversation"], (0, 0, 1)),
    "language": (["Unnatural Instructions"], (0, 0, 1)),
}

# The three hand-counted fixtures: (captions with gold sets, hand-listed mentions, CHAIR_i, CHAIR_s).
CHAIR_FIXTURES = [
    (
        [("A cat and a dog sit near a chair.", {"cat", "dog"})],
        [{"cat", "dog", "chair"}],
        Fraction(1, 3), Fraction(1),
    ),
    (
        [("Two dogs chase a cat across the grass.", {"cat", "dog"}),
         ("A man rides a bicycle.", {"person", "bicycle"})],
        [{"dog", "cat"}, {"person", "bicycle"}],
        Fraction(0), Fraction(0),
    ),
    (
        [("A pizza on a dining table.", {"pizza", "dining table"}),
         ("A laptop glows in a dark room.", {"keyboard"})],
        [{"pizza", "dining table"}, {"laptop"}],
        Fraction(1, 3), Fraction(1, 2),
    ),
]


_chars = st.characters(blacklist_categories=("Cs",))
plain = st.text(_chars, min_size=1, max_size=15).filter(lambda t: "<p>" not in t and "</p>" not in t)
phrase = plain


@st.composite
def boxes(draw):
    out = []
    for _ in range(draw(st.integers(1, 3))):
        x0, x1 = sorted(draw(st.lists(st.integers(0, 100), min_size=2, max_size=2)))
        y0, y1 = sorted(draw(st.lists(st.integers(0, 100), min_size=2, max_size=2)))
        out.append(NormBox(x0, y0, x1, y1))
    return tuple(out)


@st.composite
def grounded_texts(draw):
    segs = []
    for _ in range(draw(st.integers(0, 6))):
        if draw(st.booleans()):
            text = draw(plain)
            if segs and isinstance(segs[-1], PlainText):
                continue
            if segs and isinstance(segs[-1], GroundedSpan) and text.startswith("{"):
                text = " " + text
            segs.append(PlainText(text))
        else:
            segs.append(GroundedSpan(draw(phrase), draw(boxes())))
    return GroundedText(segs)
