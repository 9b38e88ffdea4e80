"""How much can a selector gain over the text network alone?

Generates a synthetic catalogue, applies the ideal per-modality rules
(read the class token, read the colour patch) and prints the four
correctness quadrants. The text+/image- and text-/image+ cells are the
room a learned selector has to work with.

    python demos/headroom.py
"""

import numpy as np

from mmfusion import datagen, evalkit


def main():
    spec = datagen.GenSpec(classes=20, n=10_000, p_text=0.7, p_image=0.55, seed=7)
    ds = datagen.gen_synthetic(spec)
    print("informative rates:", {k: round(v, 4) for k, v in datagen.informative_rates(ds).items()})

    text_pred, image_pred = datagen.ideal_predictions(ds, spec)
    v = evalkit.CorrectnessVectors(
        evalkit.correctness(text_pred, ds.shelves), evalkit.correctness(image_pred, ds.shelves)
    )
    print(f"ideal text  {v.text_correct.mean():.4f}")
    print(f"ideal image {v.image_correct.mean():.4f}")
    print(f"oracle      {evalkit.oracle_accuracy(v):.4f}")
    print()
    print("\n".join(evalkit.quadrant_report(v).lines()))

    analytic = datagen.ideal_accuracies(spec)
    print()
    print("analytic:", {k: round(float(x), 4) for k, x in analytic.items()})
    assert np.isclose(v.text_correct.mean(), analytic["text"], atol=0.02)


if __name__ == "__main__":
    main()
