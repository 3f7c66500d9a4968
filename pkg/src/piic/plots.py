"""SVG trajectory plots (display only)."""

import numpy as np


def ellipse_points(mean, cov, n_sigma=2.0, n=64):
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    angles = np.linspace(0.0, 2 * np.pi, n)
    circle = np.stack([np.cos(angles), np.sin(angles)])
    return mean[:, None] + n_sigma * (v * np.sqrt(np.clip(w, 0.0, None))) @ circle


def plot_trajectories(res, path, every=20):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sc = res.scenario
    fig, ax = plt.subplots(figsize=(6, 6))
    stride = 3 if sc.raw.get("model", {}).get("type") == "multi_unicycle" else sc.model.n_x
    n_agents = sc.model.n_x // stride if stride == 3 else 1
    for rec in res.summary.records:
        for i in range(n_agents):
            ax.plot(rec.states[:, stride * i], rec.states[:, stride * i + 1], color="0.7", lw=0.5)
    inf = res.inference
    if hasattr(inf, "moments"):
        mean, cov = inf.moments.state_means, inf.moments.state_covs
    else:
        mean, cov = inf.policy.x_nom, None
    for i in range(n_agents):
        ix = [stride * i, stride * i + 1]
        ax.plot(mean[:, ix[0]], mean[:, ix[1]], color="C0", lw=1.5)
        if cov is not None:
            for t in range(0, mean.shape[0], every):
                pts = ellipse_points(mean[t, ix], cov[t][np.ix_(ix, ix)])
                ax.plot(pts[0], pts[1], color="C1", lw=0.6)
    scale = sc.raw.get("evaluation", {}).get("obstacle_radius_scale", 1.0)
    for obs in sc.raw.get("obstacles", []) or []:
        c = obs["center"]
        ax.add_patch(plt.Circle(c, obs["radius"], color="k", alpha=0.3))
        if scale != 1.0:
            ax.add_patch(plt.Circle(c, obs["radius"] * scale, fill=False, color="r", ls="--"))
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"{sc.name} ({res.algorithm})")
    fig.savefig(path, format="svg")
    plt.close(fig)
