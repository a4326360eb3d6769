from setuptools import setup, find_packages

setup(
    name="dec-sgg",
    version="0.3.0",
    packages=find_packages(exclude=["examples", "examples.*"]),
    install_requires=[
        "click>=8.0.0",
        "numpy>=1.21.0",
        "scikit-learn>=1.0.0",
        "python-json-logger>=2.0.0",
        "python-dotenv>=1.0.0",
        "psutil>=5.8.0",
    ],
    entry_points={
        "console_scripts": [
            "decsgg=dec_sgg.cli:entry",
        ],
    },
    author="DecSGG Team",
    description="Decomposition and composition augmentation for long-tailed scene graph relations",
    python_requires=">=3.8",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3.8",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
