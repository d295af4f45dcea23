"""Static figures for benchmark and training reports (file output only)."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import IoFailure  # noqa: E402


def _save(fig, path):
    try:
        fig.savefig(path, dpi=100, metadata={"Software": None})
    except OSError as err:
        raise IoFailure(f"cannot write {path}: {err}") from err
    finally:
        plt.close(fig)
    return path


def plot_scaling(records, path, axis="K"):
    """Log-log time against ``axis``, one line per (setting, mode, fixed axes) group."""
    fig, ax = plt.subplots(figsize=(6, 4))
    groups = {}
    for r in records:
        rest = tuple((a, getattr(r, a)) for a in ("K", "batch", "classes") if a != axis)
        groups.setdefault((r.setting, r.mode, rest), []).append(r)
    for (setting, mode, rest), rs in sorted(groups.items()):
        rs.sort(key=lambda r: getattr(r, axis))
        label = f"{setting} {mode} " + " ".join(f"{a}={v}" for a, v in rest)
        ax.loglog([getattr(r, axis) for r in rs], [r.seconds for r in rs], marker="o", label=label)
    ax.set_xlabel(axis)
    ax.set_ylabel("seconds per iteration")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_trace(trace, path):
    """Loss terms and mean posterior entropy per epoch."""
    epochs = np.arange(1, len(trace) + 1)
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.plot(epochs, [t.ure for t in trace], label="risk")
    a.plot(epochs, [t.total for t in trace], label="total")
    a.set_xlabel("epoch")
    a.legend()
    b.plot(epochs, [t.entropy for t in trace], color="tab:green")
    b.set_xlabel("epoch")
    b.set_ylabel("posterior entropy")
    fig.tight_layout()
    return _save(fig, path)
