"""Smoke test for the anaphora_py extension module.

Build first:
    cargo build --release -p anaphora-py --features extension-module
then run `python3 python/smoke_test.py [checkpoint.bin]`.
"""

import importlib.machinery
import importlib.util
import json
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import anaphora_py

        return anaphora_py
    except ImportError:
        pass
    for name in ("libanaphora_py.so", "libanaphora_py.dylib", "anaphora_py.dll"):
        path = ROOT / "target" / "release" / name
        if path.exists():
            loader = importlib.machinery.ExtensionFileLoader("anaphora_py", str(path))
            spec = importlib.util.spec_from_file_location("anaphora_py", path, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("anaphora_py not found; build it with cargo build --release -p anaphora-py --features extension-module")


def main():
    ap = load()

    data = ap.generate()
    assert len(data) == 5122, len(data)
    forms = {}
    for _, _, form in data:
        forms[form] = forms.get(form, 0) + 1
    assert sorted(forms.values()) == [182, 208, 4732], forms
    assert ap.interpret("Alice sees herself") == "see ( alice , alice )"
    try:
        ap.interpret("herself sees Alice")
        raise AssertionError("ungrammatical input accepted")
    except ValueError:
        pass

    src, tgt = ap.vocabularies()
    assert (len(src), len(tgt)) == (45, 46)
    assert src[:2] == ["<sos>", "<eos>"]

    e1 = json.loads(ap.split("E1", seed=0))
    assert (len(e1["train"]), len(e1["validation"]), len(e1["test"])) == (4092, 511, 512)
    assert len(e1["generalization"]) == 7
    assert len(json.loads(ap.split("E3", seed=1, k=14))["generalization"]) == 196

    curves = {
        "a": [0, 0, 0, 1, 1, 1, 1, 1, 1],
        "b": [0, 0, 0, 0, 0, 1, 1, 1, 1],
        "c": [0, 0, 0, 0, 0, 0, 0, 0, 1],
    }
    assert ap.learning_delta(curves, ["a", "b", "c"]) == 5
    assert ap.learning_delta({"a": [1.0, 1.0], "b": [0.0, 0.0]}, ["a", "b"]) is None

    report = ap.gradcheck(examples=10)
    assert len(report) == 6 and all(ok for _, _, ok in report), report

    if len(sys.argv) > 1:
        model = ap.Model.load(sys.argv[1])
        print(model.architecture, "->", model.parse("Alice sees herself"))

    print("smoke test passed")


if __name__ == "__main__":
    main()
