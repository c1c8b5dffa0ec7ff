"""Short deterministic training loop; reports the best validation accuracy seen."""

from __future__ import annotations

import time

import torch
from torch import nn

from .config import PluginConfig
from .model_builder import build_model


def _accuracy(model: nn.Module, x: torch.Tensor, y: torch.Tensor, batch_size: int) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            logits = model(x[start:start + batch_size])
            correct += int((logits.argmax(dim=1) == y[start:start + batch_size]).sum())
    return correct / len(x)


def train_and_score(description: dict, data, cfg: PluginConfig,
                    epochs: int, time_limit: float) -> float:
    """Build and train for up to `epochs` (or until time runs out); returns best val accuracy.

    Seeds the global torch RNG before constructing the model so weight
    initialization, batching and the reported accuracy are all functions of
    (seed, request) alone.
    """
    train_x, train_y, val_x, val_y = data
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)
    device = torch.device(cfg.device)
    model = build_model(description).to(device)
    train_x, train_y = train_x.to(device), train_y.to(device)
    val_x, val_y = val_x.to(device), val_y.to(device)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    shuffler = torch.Generator().manual_seed(cfg.seed)

    best = _accuracy(model, val_x, val_y, cfg.batch_size)
    deadline = time.monotonic() + time_limit
    for _ in range(epochs):
        model.train()
        order = torch.randperm(len(train_x), generator=shuffler)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            loss = loss_fn(model(train_x[batch]), train_y[batch])
            loss.backward()
            optimizer.step()
        best = max(best, _accuracy(model, val_x, val_y, cfg.batch_size))
        if time.monotonic() > deadline:
            break
    return best
