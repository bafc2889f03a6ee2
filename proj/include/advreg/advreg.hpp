#pragma once

#include <advreg/adversary.hpp>
#include <advreg/augmenter.hpp>
#include <advreg/checkpoint.hpp>
#include <advreg/commands.hpp>
#include <advreg/config.hpp>
#include <advreg/dataset.hpp>
#include <advreg/decoder.hpp>
#include <advreg/error.hpp>
#include <advreg/evaluation.hpp>
#include <advreg/example.hpp>
#include <advreg/gradcheck.hpp>
#include <advreg/insight.hpp>
#include <advreg/model.hpp>
#include <advreg/objectives.hpp>
#include <advreg/rng.hpp>
#include <advreg/synthetic.hpp>
#include <advreg/tensor.hpp>
#include <advreg/vocab.hpp>
