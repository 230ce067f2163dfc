"""Smoke test for the pageocr Python bindings.

Build and install first:
    pip install --no-build-isolation ./crates/python
then run:
    python3 python/smoke_test.py
"""

import json

import pageocr_py as po


def check_geometry():
    a = po.BBox(0, 0, 10, 10)
    b = po.BBox(5, 0, 15, 10)
    assert a.area() == 100 and a.to_list() == [0, 0, 10, 10]
    assert abs(po.iou(a, b) - 1 / 3) < 1e-12
    assert po.iou(a, a) == 1.0
    try:
        po.BBox(5, 5, 5, 9)
    except ValueError:
        pass
    else:
        raise AssertionError("degenerate box accepted")

    m = po.match_boxes([a, b], [po.BBox(0, 0, 10, 10)], 0.5)
    assert m["pairs"] == [(0, 0, 1.0)]
    assert m["unmatched_detections"] == [1] and m["unmatched_ground_truths"] == []

    scores = po.detection_metrics([([a, b], [a])])
    assert [s["threshold"] for s in scores] == [0.5, 0.75, 0.9]
    assert scores[0]["precision"] == 0.5 and scores[0]["recall"] == 1.0


def check_recognition_metrics():
    assert po.levenshtein("kitten", "sitting") == 3
    assert po.levenshtein("", "abc") == 3
    r = po.isolated_eval([("hello", "hello"), ("world", "word")])
    assert r["wrr"] == 50.0
    assert abs(r["crr"] - 90.0) < 1e-9


def check_render_and_preprocess():
    img = po.render_word("mango", seed=4)
    assert img.width > img.height > 0
    assert len(img.data()) == img.width * img.height
    png = img.to_png()
    assert po.Image.from_png(png).data() == img.data()

    crop, box = po.preprocess(img)
    assert 0 < crop.width <= img.width and crop.height == box.height
    noisy_crop, noisy_box = po.preprocess(po.render_word("mango", seed=4, ruled_line=True, border_noise=True))
    assert noisy_crop.width > 0 and noisy_box.width > 0
    return crop


def check_compose():
    words = []
    for i, text in enumerate(["alpha", "beta", "gamma", "delta", "eps"] * 4):
        crop, _ = po.preprocess(po.render_word(text, seed=i))
        words.append((crop, text, "syn"))
    page, label_json, consumed = po.compose_page(words, seed=9, page_width=600, page_height=400)
    label = json.loads(label_json)
    assert (page.width, page.height) == (600, 400)
    assert consumed <= len(words)
    assert len(label["words"]) > 0
    for w in label["words"]:
        x0, y0, x1, y1 = w["bbox"]
        assert 0 <= x0 < x1 <= 600 and 0 <= y0 < y1 <= 400
    again = po.compose_page(words, seed=9, page_width=600, page_height=400)
    assert again[0].data() == page.data() and again[1] == label_json


if __name__ == "__main__":
    check_geometry()
    check_recognition_metrics()
    check_render_and_preprocess()
    check_compose()
    print("python smoke test: ok")
