import os
import sys

import numpy as np
import pytest

# 添加当前目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from services.case_service import CapacityProblem, RzfProblem
from services.channel_service import random_miso_users, random_mimo_model


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def capacity_problem():
    """按种子生成 M=4、N=4、L=10 的容量最大化实例"""
    def make(seed, gradient_mode="analytic", num_paths=10):
        model = random_mimo_model(np.random.default_rng(seed), num_paths, 4)
        return CapacityProblem(model, noise_power=1.0, max_power=10.0, gradient_mode=gradient_mode)
    return make


@pytest.fixture
def rzf_problem():
    """按种子生成 K=4、L=10、α=6 的 RZF 实例"""
    def make(seed, gradient_mode="analytic"):
        users = random_miso_users(np.random.default_rng(seed), 4, 10, noise_power=1.0)
        return RzfProblem(users, alpha=6.0, gradient_mode=gradient_mode)
    return make


@pytest.fixture
def write_config(tmp_path):
    """把 key=value 文本写入临时配置文件"""
    def write(text, name="experiment.env"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return write
