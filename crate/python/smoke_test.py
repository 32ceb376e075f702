"""Smoke test for the Python bindings.

Build and install the extension first:

    pip install maturin
    maturin develop -m crates/py/Cargo.toml --release

then run `python python/smoke_test.py`.
"""

import json

import gaitrecon


def main():
    skeleton = gaitrecon.Skeleton.biped18()
    assert len(skeleton) == 18
    assert skeleton.joint_names[0] == "hips"
    assert gaitrecon.Skeleton.from_json(skeleton.to_json()).joint_names == skeleton.joint_names

    clips = []
    for seed in (1, 2):
        clip, streams, phases = gaitrecon.synthesize("walk", cycles=4, seed=seed, gait_noise=True)
        assert len(streams) == 1 and len(streams[0]) == len(clip) == len(phases)
        clips.append((clip, streams, "walk"))

    text = clips[0][0].to_csv()
    again = gaitrecon.MotionClip.from_csv(text, skeleton)
    assert again.to_csv() == text

    model = gaitrecon.Model.train(clips)
    assert model.segments == 64
    assert ("walk", "IC_LR") in model.phases
    restored = gaitrecon.Model.from_json(model.to_json())
    assert restored.n_states == model.n_states

    truth, streams, labels = gaitrecon.synthesize("walk", cycles=4, seed=3)
    pred, predicted = gaitrecon.Reconstructor(model).run(streams)
    assert len(pred) == len(truth)
    report = gaitrecon.evaluate(pred, truth)
    agree = sum(p == t for p, t in zip(predicted[30:], labels[30:])) / (len(labels) - 30)

    rec = gaitrecon.Reconstructor(model, foot_lock=False)
    for row in streams[0].rows()[:5]:
        out = rec.step(list(row))
    assert len(out["positions"]) == 18 and len(out["rotations"]) == 18

    try:
        rec.step([0.0] * 5)
    except ValueError:
        pass
    else:
        raise AssertionError("short reading accepted")

    print(json.dumps({"rmse_cm": round(report["rmse_cm"], 3), "phase_agreement": round(agree, 3)}))
    print("ok")


if __name__ == "__main__":
    main()
