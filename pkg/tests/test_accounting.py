import numpy as np
import pytest

from lifevit import life as life_mod
from lifevit import tensor as T
from lifevit.accounting import cost_report, count_macs, count_params, format_report, overhead_report
from lifevit.config import deit_tiny, desk_tiny
from lifevit.model import VisionTransformer, init_params

# Closed-form reference for DeiT-T/100 with a C×(N+1) positional table. This
# package sizes the table C×N (positions for patch tokens only), one column
# of C = 192 fewer.
DEIT_T_REFERENCE = 5_543_716
POS_COLUMN = 192


@pytest.fixture
def mac_tally(monkeypatch):
    """Count multiply-adds of every matmul/convolution run by a real forward pass."""
    tally = {"macs": 0}
    real_matmul, real_conv, real_dw = T.matmul, life_mod.conv2d, life_mod.depthwise_conv2d

    def matmul(a, b):
        out = real_matmul(a, b)
        tally["macs"] += out.data.size * a.shape[-1]
        return out

    def conv2d(x, w, b=None, stride=1, pad=0):
        out = real_conv(x, w, b, stride, pad)
        tally["macs"] += out.data.size * int(np.prod(w.shape[1:]))
        return out

    def depthwise(x, w, b=None, pad=0):
        out = real_dw(x, w, b, pad)
        tally["macs"] += out.data.size * w.shape[-1] ** 2
        return out

    monkeypatch.setattr(T, "matmul", matmul)
    monkeypatch.setattr(life_mod, "conv2d", conv2d)
    monkeypatch.setattr(life_mod, "depthwise_conv2d", depthwise)
    return tally


@pytest.mark.parametrize("mode", ["pff", "life", "life_onescale"])
def test_param_count_matches_instantiated_tensors(mode):
    for cfg in (deit_tiny(qkv_mode=mode), desk_tiny(qkv_mode=mode)):
        assert count_params(cfg) == sum(p.data.size for p in init_params(cfg).values())


def test_deit_tiny_param_count():
    total = count_params(deit_tiny())
    assert total == DEIT_T_REFERENCE - POS_COLUMN
    assert abs(total / 5.54e6 - 1) < 5e-3


def test_deit_tiny_life_param_count():
    base, life = count_params(deit_tiny()), count_params(deit_tiny(qkv_mode="life"))
    assert life - base == 82_944 == 12 * 6_912
    assert life == 5_626_660 - POS_COLUMN
    assert abs(life / 5.62e6 - 1) < 5e-3


def test_head_only_dependence():
    assert count_params(deit_tiny(100)) - count_params(deit_tiny(10)) == 90 * 193 == 17_370
    assert count_macs(deit_tiny(200)) - count_macs(deit_tiny(100)) == 192 * 100


@pytest.mark.parametrize("mode", ["pff", "life", "life_onescale"])
@pytest.mark.parametrize("preset", [desk_tiny, deit_tiny])
def test_macs_match_traced_forward(mac_tally, mode, preset):
    cfg = preset(qkv_mode=mode)
    VisionTransformer(cfg).predict(np.zeros((1, 3, cfg.image_size, cfg.image_size), np.float32))
    assert mac_tally["macs"] == count_macs(cfg)


def test_deit_tiny_gmac():
    assert abs(count_macs(deit_tiny()) / 1e9 / 1.26 - 1) < 0.03
    assert abs(count_macs(deit_tiny(qkv_mode="life")) / 1e9 / 1.27 - 1) < 0.03


def test_overhead_percentages():
    base, life = cost_report(deit_tiny()), cost_report(deit_tiny(qkv_mode="life"))
    over = overhead_report(base, life)
    assert round(over["params_pct"], 2) == 1.50
    assert 0 < over["macs_pct"] <= 2.0
    same = overhead_report(base, base)
    assert same["params_pct"] == same["macs_pct"] == 0.0


def test_input_size_scaling_and_errors():
    cfg = desk_tiny()
    assert cost_report(cfg).input_size == 32
    assert count_macs(cfg, 64) > count_macs(cfg)
    assert cost_report(cfg, 64).total_params == count_params(cfg)
    with pytest.raises(ValueError):
        cost_report(cfg, 30)


def test_breakdown_sums_and_text_form():
    report = cost_report(deit_tiny(qkv_mode="life"))
    assert sum(p for _, p, _ in report.breakdown) == report.total_params
    text = format_report(report)
    assert "total_params: 5626468" in text and "gmac: 1.269" in text
    assert report.as_dict()["mparams"] == pytest.approx(5.626468)
