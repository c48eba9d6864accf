"""Historical inference with an ensemble of cross-validated checkpoints.

Every fold's checkpoint predicts every chip; the report is the member mean
with a per-pixel spread layer, aggregated into a median time series with
an interquartile band and annual monsoon maxima (June 1 - October 31).
"""
import tempfile

from floodfusion.evalmetrics import aggregate_series, annual_monsoon_max
from floodfusion.infer import Ensemble, ensemble_infer, \
    records_to_series_input
from floodfusion.synthsim import SceneParams, gen_dataset
from floodfusion.trainer import TrainConfig, train

with tempfile.TemporaryDirectory() as work:
    params = SceneParams(seed=2, grid_chips=1, years=[2018, 2019],
                         composites_per_year=30, sequence_stride=4)
    manifest = gen_dataset(params, work + "/data")

    # one checkpoint per fold = the ensemble
    paths = []
    for year in (2018, 2019):
        cfg = TrainConfig(leave_out_year=year,
                          lr_schedule=[(3, 3e-3)], batch_size=4,
                          optimizer="adam", seed=0, augment=False,
                          width=8, hidden_size=16)
        paths.append(train(cfg, manifest, work + "/run").checkpoint_path)

    ensemble = Ensemble.from_checkpoints(paths)
    records = ensemble_infer(ensemble, manifest)
    print(f"{len(records)} chip predictions from "
          f"{len(ensemble.members)} members")

    series = aggregate_series(records_to_series_input(records))
    print(f"{'date':>12} {'median':>7} {'iqr band':>15}")
    for pt in series:
        print(f"{pt.date.isoformat():>12} {pt.median:>7.3f} "
              f"[{pt.band_low:.3f}, {pt.band_high:.3f}]")

    for year, peak in sorted(annual_monsoon_max(series).items()):
        shown = "no in-window data" if peak is None else f"{peak:.3f}"
        print(f"monsoon max {year}: {shown}")

    spread = max(float(r.spread.max()) for r in records)
    print(f"largest per-pixel member spread: {spread:.3f}")
