"""
Log-log figures of estimator and iteration histories, written as SVG.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["loglog_svg"]


def loglog_svg(series, path, xlabel="", ylabel="", title="", slopes=()):
    """Write a log-log plot.

    Parameters
    ----------
    series : list of (label, x, y)
        Curves; non-positive points are dropped.
    slopes : sequence of float
        Reference slopes drawn as dashed lines through the lower end of the data.

    The SVG output is byte-reproducible for identical input.
    """
    with plt.rc_context({"svg.hashsalt": "afem", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        xs, ys = [], []
        for label, x, y in series:
            pts = [(float(a), float(b)) for a, b in zip(x, y) if a > 0 and b > 0]
            if not pts:
                continue
            px, py = zip(*pts)
            ax.loglog(px, py, marker=".", label=label)
            xs.extend(px)
            ys.extend(py)
        if xs:
            x0, x1 = min(xs), max(xs)
            y0 = min(ys)
            for s in slopes:
                if x1 > x0:
                    ax.loglog([x0, x1], [y0 * 2.0, y0 * 2.0 * (x1 / x0) ** s], "k--",
                              linewidth=0.8, label=f"slope {s:g}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize="small")
        ax.grid(True, which="major", linewidth=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
