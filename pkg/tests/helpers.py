from acesched.ace_profiler import AceProfile, ConfigPoint, RawProfile


def make_profile(model, a, l_ms, e_mj, resolution=640, stride=1, roi_scale=None, g640=None):
    l = l_ms / 1e3
    raw = RawProfile(
        a_fr=a, a_ev=a, a_blend=a, l_mean=l * stride, l_p90=l * stride, l_eff=l,
        e_per_frame=e_mj / 1e3, mean_excess_power=0.0, g640=g640,
        c_flop=None if g640 is None else g640 * (resolution / 640) ** 2 / stride,
    )
    return AceProfile(ConfigPoint(model, resolution, stride, roi_scale), raw)
