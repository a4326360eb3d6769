#!/usr/bin/env python3

from dec_sgg.cli import entry

if __name__ == '__main__':
    entry()
