// Copyright 2026 The perfcal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Model fixtures shared by the unit tests and the acceptance binary.

#include <string>

#include "perfcal/model.hpp"

namespace perfcal::fixtures {

/// Recommender.train: preprocess, a loop over the orders fetching each
/// order's items, and a training step whose demand depends on the
/// recommender implementation. getOrderItems has no SEFF by default so the
/// train SEFF carries exactly four instrumentable elements.
inline std::string train_json(const std::string& train_demand =
                                  "(algorithm.TYPE == popularity) * 0.01 + "
                                  "(algorithm.TYPE == slopeone) * (0.02 + 0.001 * orders.NUMBER_OF_ELEMENTS)",
                              bool persistence_seff = false) {
  std::string persistence;
  if (persistence_seff) {
    persistence = R"(,
    {"service": "getOrderItems", "actions": [
      {"kind": "internal", "id": "fetchItems", "resource": "CPU", "demand": "0.001"}]})";
  }
  return R"({
  "commitId": "c1",
  "components": [{"id": "Recommender"}, {"id": "Persistence"}],
  "services": [{"id": "train", "component": "Recommender"},
               {"id": "getOrderItems", "component": "Persistence"}],
  "seffs": [
    {"service": "train", "actions": [
      {"kind": "internal", "id": "preprocess", "resource": "CPU",
       "demand": "0.001 * orders.NUMBER_OF_ELEMENTS + 0.002"},
      {"kind": "loop", "id": "orderLoop", "iterations": "orders.NUMBER_OF_ELEMENTS", "body": [
        {"kind": "external", "id": "callGetOrderItems", "target": "getOrderItems",
         "arguments": {"order.VALUE": "orders.NUMBER_OF_ELEMENTS"}},
        {"kind": "internal", "id": "collectItems", "resource": "CPU", "demand": "0.0005"}]},
      {"kind": "internal", "id": "trainForRecommender", "resource": "CPU",
       "demand": ")" + train_demand + R"("}]})" +
         persistence + R"(
  ],
  "resourceEnvironment": {"containers": [
    {"host": "app", "processors": 1, "rate": 1.0, "scheduling": "PROCESSOR_SHARING"}]},
  "allocation": {"Recommender": "app", "Persistence": "app"},
  "usageModel": {"population": 20, "thinkTime": "2.0", "entryService": "train",
    "inputs": {"orders.NUMBER_OF_ELEMENTS": "IntPMF[(1;0.25)(5;0.25)(10;0.25)(20;0.25)]",
               "algorithm.TYPE": {"labels": [
                 {"label": "popularity", "condition": "IntPMF[(0;0.5)(1;0.5)]"},
                 {"label": "slopeone", "condition": "IntPMF[(0;0.5)(1;0.5)]"}]}}}
})";
}

inline model::PerformanceModel train_model(bool persistence_seff = false) {
  return model::from_json(json::parse(train_json(
      "(algorithm.TYPE == popularity) * 0.01 + "
      "(algorithm.TYPE == slopeone) * (0.02 + 0.001 * orders.NUMBER_OF_ELEMENTS)",
      persistence_seff)));
}

/// Point-of-sale bookSale: validation, a loop over sale items querying the store,
/// the booking transaction, a payment loop with a probabilistic count and a
/// closing step. Nine actions in total.
inline std::string book_sale_json() {
  return R"({
  "commitId": "b1",
  "components": [{"id": "CashDesk"}, {"id": "Store"}, {"id": "Bank"}],
  "services": [{"id": "bookSale", "component": "CashDesk"},
               {"id": "getStockItem", "component": "Store"},
               {"id": "bookTransaction", "component": "Store"},
               {"id": "processPayment", "component": "Bank"}],
  "seffs": [
    {"service": "bookSale", "actions": [
      {"kind": "internal", "id": "validateSale", "demand": "0.002"},
      {"kind": "loop", "id": "itemLoop", "iterations": "items.NUMBER_OF_ELEMENTS", "body": [
        {"kind": "external", "id": "queryStockItem", "target": "getStockItem",
         "arguments": {"item.VALUE": "1"}},
        {"kind": "internal", "id": "updateItem", "demand": "0.0004"}]},
      {"kind": "external", "id": "callBookTransaction", "target": "bookTransaction",
       "arguments": {"sale.NUMBER_OF_ELEMENTS": "items.NUMBER_OF_ELEMENTS"}},
      {"kind": "loop", "id": "paymentLoop", "iterations": "IntPMF[(1;0.8)(2;0.2)]", "body": [
        {"kind": "external", "id": "callProcessPayment", "target": "processPayment"},
        {"kind": "internal", "id": "registerPayment", "demand": "0.001"}]},
      {"kind": "internal", "id": "finishSale", "demand": "0.0015"}]},
    {"service": "getStockItem", "actions": [
      {"kind": "internal", "id": "lookupStock", "demand": "0.0008"}]},
    {"service": "bookTransaction", "actions": [
      {"kind": "internal", "id": "persistSale", "demand": "0.001 + 0.0002 * sale.NUMBER_OF_ELEMENTS"}]},
    {"service": "processPayment", "actions": [
      {"kind": "internal", "id": "authorize", "resource": "DELAY", "demand": "0.01"}]}
  ],
  "resourceEnvironment": {"containers": [
    {"host": "store", "processors": 2, "rate": 1.0, "scheduling": "PROCESSOR_SHARING"},
    {"host": "bank", "processors": 1, "rate": 1.0, "scheduling": "PROCESSOR_SHARING"}]},
  "allocation": {"CashDesk": "store", "Store": "store", "Bank": "bank"},
  "usageModel": {"population": 10, "thinkTime": "1.0", "entryService": "bookSale",
    "inputs": {"items.NUMBER_OF_ELEMENTS": "IntPMF[(1;0.2)(2;0.2)(3;0.2)(4;0.2)(5;0.2)]"}}
})";
}

inline model::PerformanceModel book_sale_model() { return model::from_json(json::parse(book_sale_json())); }

/// One component, one service, one internal action.
inline model::PerformanceModel minimal_model(const std::string& demand = "0.1", double rate = 1.0) {
  model::PerformanceModel m;
  m.commit_id = "m1";
  m.components = {{"C"}};
  m.services = {{"s", "C"}};
  m.seffs = {{"s", {model::Action{model::InternalAction{"ia", model::ResourceType::Cpu, stoex::parse(demand), ""}}}}};
  m.resources.containers = {{"h", 1, rate, model::Scheduling::ProcessorSharing}};
  m.allocation = {{"C", "h"}};
  m.usage = model::UsageModel{1, stoex::double_lit(0.0), "s", {}};
  return m;
}

}  // namespace perfcal::fixtures
