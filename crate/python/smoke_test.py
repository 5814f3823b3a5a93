"""Smoke test for the routecast_py extension.

Run after `cargo build -p routecast-py`:

    python3 python/smoke_test.py

The module is imported normally when installed, otherwise it is loaded from
target/{release,debug}/libroutecast_py.so.
"""

import importlib.machinery
import importlib.util
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import routecast_py

        return routecast_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libroutecast_py.so", "libroutecast_py.dylib"):
            path = ROOT / "target" / profile / name
            if path.exists():
                loader = importlib.machinery.ExtensionFileLoader("routecast_py", str(path))
                spec = importlib.util.spec_from_loader("routecast_py", loader)
                module = importlib.util.module_from_spec(spec)
                loader.exec_module(module)
                return module
    sys.exit("routecast_py not found; run `cargo build -p routecast-py` first")


def main():
    rc = load()

    fp = rc.Floorplan()
    assert (fp.cols, fp.rows) == (8, 8)
    assert rc.Floorplan.from_json(fp.to_json()).n_segments == fp.n_segments

    net = rc.Netlist.synthetic(1)
    assert rc.Netlist.parse(net.serialize()).n_blocks == net.n_blocks

    place = rc.anneal(net, fp, seed=3, alpha_t=0.8)
    routed = rc.route(net, place, fp)
    assert not routed.overflow
    util = routed.utilization
    assert 0.0 <= util.max() <= 1.0
    assert len(util.values()) == fp.n_segments

    base = rc.render_placement(fp, place, w=64)
    conn = rc.render_connectivity(net, fp, place, w=64)
    heat = rc.render_heatmap(fp, util, base)
    assert (heat.width, heat.height, heat.channels) == (64, 64, 3)
    assert conn.width == 64

    decoded = rc.decode_heatmap(fp, heat)
    err = max(abs(a - b) for a, b in zip(decoded.values(), util.values()))
    assert err < 0.05, err
    assert rc.per_pixel_accuracy(fp, heat, util) == 1.0

    scores = {f"p{i}": float(i) for i in range(20)}
    assert rc.topk_overlap(scores, scores, k=10) == 1.0

    with tempfile.TemporaryDirectory() as tmp:
        png = pathlib.Path(tmp) / "heat.png"
        png.write_bytes(heat.to_png())
        assert rc.Image.read_png(str(png)).width == 64

        assert rc.cli(["--out", tmp, "gen-arch"]) == 0
        assert rc.cli(["--out", tmp, "gen-arch", "--cols", "1"]) == 2

        ds = pathlib.Path(tmp) / "ds"
        n = rc.build_dataset(fp, net, str(ds), [1, 2], alpha_ts=[0.7, 0.9])
        assert n == 4
        model = rc.Model.train(str(ds), epochs=1, base_width=8, seed=1)
        assert model.image_size == 64 and model.step == n
        pred = model.infer(base, conn)
        assert (pred.width, pred.height) == (64, 64)
        ckpt = pathlib.Path(tmp) / "m.ckpt"
        model.save(str(ckpt))
        assert rc.Model.load(str(ckpt)).step == model.step

    print("routecast_py smoke test passed")


if __name__ == "__main__":
    main()
