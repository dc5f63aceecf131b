"""Golden format-gate cases shared by the unit and acceptance suites.

Each entry is ``(text, s_format, first_violation_or_None)``.
"""

from mtreason.reward import Violation as V

GOLDEN = [
    # well formed
    ("<think>reasoning</think><answer>Bonjour</answer>", 1, None),
    ("<think>a</think><answer>b</answer>", 1, None),
    ("  <think>a</think>\n<answer>b</answer>  ", 1, None),
    ("\n\n<think>\nstep 1\nstep 2\n</think>\n\n<answer>\nHallo Welt\n</answer>\n", 1, None),
    ("<think></think><answer>empty reasoning is allowed</answer>", 1, None),
    ("<think>a</think>\t<answer>  b  </answer>", 1, None),
    ("<think>uses <b>html</b> inside</think><answer>ok</answer>", 1, None),
    ("<think>数学</think><answer>你好世界</answer>", 1, None),
    ("<think>a < b and c > d</think><answer>x</answer>", 1, None),
    # missing tags
    ("plain untagged text", 0, V.MISSING_TAG),
    ("", 0, V.MISSING_TAG),
    ("<think>only reasoning</think>", 0, V.MISSING_TAG),
    ("<answer>only answer</answer>", 0, V.MISSING_TAG),
    ("<think>a</think><answer>b", 0, V.MISSING_TAG),
    ("<think>a<answer>b</answer>", 0, V.MISSING_TAG),
    ("<THINK>a</THINK><ANSWER>b</ANSWER>", 0, V.MISSING_TAG),
    ("<Think>a</Think><answer>b</answer>", 0, V.MISSING_TAG),
    ("<think >a</think><answer>b</answer>", 0, V.MISSING_TAG),
    # duplicates
    ("<think>a</think><answer>b</answer><answer>c</answer>", 0, V.DUPLICATE_TAG),
    ("<think>a</think><think>b</think><answer>c</answer>", 0, V.DUPLICATE_TAG),
    ("<think>a</think><answer>b</answer></answer>", 0, V.DUPLICATE_TAG),
    ("<think><think>a</think><answer>b</answer>", 0, V.DUPLICATE_TAG),
    # order
    ("<answer>x</answer><think>y</think>", 0, V.WRONG_ORDER),
    ("</think>a<think><answer>b</answer>", 0, V.WRONG_ORDER),
    ("<think>a</think></answer>b<answer>", 0, V.WRONG_ORDER),
    ("<think>a<answer>b</think></answer>", 0, V.WRONG_ORDER),
    # nesting
    ("<think>a<answer>b</answer></think>", 0, V.NESTED_TAGS),
    ("<answer>b<think>a</think></answer>", 0, V.NESTED_TAGS),
    # text outside tags
    ("Sure! <think>a</think><answer>b</answer>", 0, V.TRAILING_GARBAGE),
    ("<think>a</think>so<answer>b</answer>", 0, V.TRAILING_GARBAGE),
    ("<think>a</think><answer>b</answer> thanks", 0, V.TRAILING_GARBAGE),
    ("<think>a</think><answer>b</answer>.", 0, V.TRAILING_GARBAGE),
    # empty answer
    ("<think>a</think><answer></answer>", 0, V.EMPTY_ANSWER),
    ("<think>a</think><answer>   \n\t</answer>", 0, V.EMPTY_ANSWER),
    ("<think></think><answer></answer>", 0, V.EMPTY_ANSWER),
]

# x -> R(x), worked by hand: clamp non-positive, else round half away from zero at 3 places.
DISCRETIZE = {
    -1.0: 0.0,
    -0.001: 0.0,
    0.0: 0.0,
    0.0004: 0.0,
    0.6234: 0.623,
    0.9999: 1.0,
}
