"""Tests for the homogenization engine"""
